//! ONNX generator backend, loaded through an embedded pure-Rust inference
//! runtime. Enabled by the `onnx` cargo feature.
//!
//! The manifest's `model_file` points at the ONNX graph and `input_layout`
//! declares whether it takes `[1, 4, H, W]` (chw) or `[1, H, W, 4]` (hwc);
//! the output must use the same layout with three channels. Models with
//! fixed spatial dimensions reject images of any other size.

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::sync::{Arc, Mutex};

use tract_onnx::prelude::*;

use crate::enhance::{EnhanceError, GeneratorBackend, GeneratorManifest, InputLayout};
use crate::image::GeneratorInput;

type Runnable = TypedRunnableModel;

pub struct OnnxGenerator {
    model_path: PathBuf,
    inference: InferenceModel,
    layout: InputLayout,
    /// One optimized plan per input size seen so far.
    plans: Mutex<BTreeMap<(usize, usize), Arc<Runnable>>>,
}

impl OnnxGenerator {
    pub fn load(manifest: &GeneratorManifest) -> Result<Self, EnhanceError> {
        let model_path = manifest.model_file.clone().ok_or_else(|| {
            EnhanceError::Backend("onnx backend requires 'model_file' in the manifest".into())
        })?;
        if !model_path.exists() {
            return Err(EnhanceError::ModelMissing(model_path));
        }
        let inference = tract_onnx::onnx()
            .model_for_path(&model_path)
            .map_err(|e| {
                EnhanceError::Backend(format!("failed to load {}: {}", model_path.display(), e))
            })?;
        Ok(Self {
            model_path,
            inference,
            layout: manifest.input_layout,
            plans: Mutex::new(BTreeMap::new()),
        })
    }

    fn input_shape(&self, h: usize, w: usize) -> [usize; 4] {
        match self.layout {
            InputLayout::Chw => [1, 4, h, w],
            InputLayout::Hwc => [1, h, w, 4],
        }
    }

    fn plan_for(&self, h: usize, w: usize) -> Result<Arc<Runnable>, EnhanceError> {
        if let Some(plan) = self.plans.lock().unwrap().get(&(h, w)) {
            return Ok(plan.clone());
        }
        let shape = self.input_shape(h, w);
        let shape_err = |e: TractError| {
            EnhanceError::Backend(format!(
                "{}: declared model I/O does not accept a {:?} input: {}",
                self.model_path.display(),
                shape,
                e
            ))
        };
        let plan = self
            .inference
            .clone()
            .with_input_fact(0, f32::fact(shape).into())
            .map_err(shape_err)?
            .into_optimized()
            .map_err(shape_err)?
            .into_runnable()
            .map_err(|e| EnhanceError::Backend(format!("{}: {}", self.model_path.display(), e)))?;
        self.plans.lock().unwrap().insert((h, w), plan.clone());
        Ok(plan)
    }
}

impl GeneratorBackend for OnnxGenerator {
    fn generate(&self, input: &GeneratorInput) -> Result<Vec<f64>, EnhanceError> {
        let (w, h) = (input.width(), input.height());
        let plan = self.plan_for(h, w)?;

        let tensor = match self.layout {
            InputLayout::Hwc => {
                let data: Vec<f32> = input.data().iter().map(|&v| v as f32).collect();
                tract_ndarray::Array4::from_shape_vec((1, h, w, 4), data)
            }
            InputLayout::Chw => {
                let mut data = vec![0.0f32; h * w * 4];
                for c in 0..4 {
                    for y in 0..h {
                        for x in 0..w {
                            data[(c * h + y) * w + x] = input.data()[(y * w + x) * 4 + c] as f32;
                        }
                    }
                }
                tract_ndarray::Array4::from_shape_vec((1, 4, h, w), data)
            }
        }
        .map_err(|e| EnhanceError::Backend(format!("input tensor: {}", e)))?;

        let result = plan
            .run(tvec!(Tensor::from(tensor).into()))
            .map_err(|e| EnhanceError::Backend(format!("{}: {}", self.model_path.display(), e)))?;
        let view = result[0]
            .to_plain_array_view::<f32>()
            .map_err(|e| EnhanceError::Backend(format!("output tensor: {}", e)))?;

        let expected: &[usize] = match self.layout {
            InputLayout::Chw => &[1, 3, h, w],
            InputLayout::Hwc => &[1, h, w, 3],
        };
        if view.shape() != expected {
            return Err(EnhanceError::Backend(format!(
                "{}: expected output shape {:?}, got {:?}",
                self.model_path.display(),
                expected,
                view.shape()
            )));
        }

        let mut out = Vec::with_capacity(h * w * 3);
        match self.layout {
            InputLayout::Chw => {
                for y in 0..h {
                    for x in 0..w {
                        for c in 0..3 {
                            out.push(f64::from(view[[0, c, y, x]]));
                        }
                    }
                }
            }
            InputLayout::Hwc => {
                for y in 0..h {
                    for x in 0..w {
                        for c in 0..3 {
                            out.push(f64::from(view[[0, y, x, c]]));
                        }
                    }
                }
            }
        }
        Ok(out)
    }
}
