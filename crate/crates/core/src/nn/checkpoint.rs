use std::path::Path;

use serde_json::json;

use super::{AdamState, BatchNorm, Model, ModelSpec};
use crate::archive::{Tensor, TensorArchive};
use crate::error::{Error, Result};

const KIND: &str = "dense-checkpoint";

/// Trained model, optimizer moments and the epoch they were taken at.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: Model<f32>,
    pub adam: AdamState<f32>,
    pub epoch: usize,
}

fn batch_norms_mut(m: &mut Model<f32>) -> Vec<&mut BatchNorm<f32>> {
    let mut out: Vec<&mut BatchNorm<f32>> = m.input_bn.iter_mut().collect();
    out.extend(m.layers.iter_mut().filter_map(|l| l.bn.as_mut()));
    out
}

fn batch_norms(m: &Model<f32>) -> Vec<&BatchNorm<f32>> {
    let mut out: Vec<&BatchNorm<f32>> = m.input_bn.iter().collect();
    out.extend(m.layers.iter().filter_map(|l| l.bn.as_ref()));
    out
}

impl Checkpoint {
    pub fn to_archive(&self) -> Result<TensorArchive> {
        let mut a = TensorArchive::with_metadata(json!({
            "kind": KIND,
            "spec": serde_json::to_value(&self.model.spec)?,
            "epoch": self.epoch,
            "adam_t": self.adam.t,
        }));
        for (k, p) in self.model.param_slices().into_iter().enumerate() {
            a.insert(format!("param.{k}"), Tensor::f32(vec![p.len()], p.to_vec())?);
            a.insert(format!("adam.m.{k}"), Tensor::f32(vec![p.len()], self.adam.m[k].clone())?);
            a.insert(format!("adam.v.{k}"), Tensor::f32(vec![p.len()], self.adam.v[k].clone())?);
        }
        for (j, bn) in batch_norms(&self.model).into_iter().enumerate() {
            let n = bn.running_mean.len();
            a.insert(format!("bn.{j}.running_mean"), Tensor::f32(vec![n], bn.running_mean.to_vec())?);
            a.insert(format!("bn.{j}.running_var"), Tensor::f32(vec![n], bn.running_var.to_vec())?);
        }
        Ok(a)
    }

    pub fn from_archive(a: &TensorArchive) -> Result<Self> {
        if a.metadata["kind"] != KIND {
            return Err(Error::CorruptArchive(format!("not a {KIND} archive")));
        }
        let spec: ModelSpec = serde_json::from_value(a.metadata["spec"].clone())?;
        let epoch = a.metadata["epoch"]
            .as_u64()
            .ok_or_else(|| Error::CorruptArchive("missing epoch".into()))? as usize;
        let t = a.metadata["adam_t"]
            .as_u64()
            .ok_or_else(|| Error::CorruptArchive("missing adam_t".into()))?;
        let mut model = Model::<f32>::build(&spec)?;
        let read = |name: String, n: usize| -> Result<Vec<f32>> {
            a.expect(&name, &[n])?
                .as_f32()
                .map(<[f32]>::to_vec)
                .ok_or_else(|| Error::CorruptArchive(format!("{name} is not f32")))
        };
        let lens: Vec<usize> = model.param_slices().iter().map(|s| s.len()).collect();
        let mut adam = AdamState::zeros(&lens);
        adam.t = t;
        for (k, p) in model.param_slices_mut().into_iter().enumerate() {
            p.copy_from_slice(&read(format!("param.{k}"), lens[k])?);
            adam.m[k] = read(format!("adam.m.{k}"), lens[k])?;
            adam.v[k] = read(format!("adam.v.{k}"), lens[k])?;
        }
        for (j, bn) in batch_norms_mut(&mut model).into_iter().enumerate() {
            let n = bn.running_mean.len();
            bn.running_mean = read(format!("bn.{j}.running_mean"), n)?.into();
            bn.running_var = read(format!("bn.{j}.running_var"), n)?.into();
        }
        Ok(Checkpoint { model, adam, epoch })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.to_archive()?.save(path)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_archive(&TensorArchive::load(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::super::{Activation, LayerSpec, LossKind};
    use super::*;
    use crate::seed::Seed;

    #[test]
    fn archive_restores_everything() {
        let spec = ModelSpec {
            input_width: 3,
            input_dropout: 0.1,
            input_batch_norm: true,
            layers: vec![
                LayerSpec::new(5, Activation::Relu, 0.2, true),
                LayerSpec::new(2, Activation::Softmax, 0.0, false),
            ],
            loss: LossKind::SoftmaxCrossEntropy,
            seed: Seed(4),
        };
        let mut model = Model::<f32>::build(&spec).unwrap();
        model.layers[0].bn.as_mut().unwrap().running_var[2] = 0.25;
        model.input_bn.as_mut().unwrap().running_mean[1] = -1.5;
        let lens: Vec<usize> = model.param_slices().iter().map(|s| s.len()).collect();
        let mut adam = AdamState::zeros(&lens);
        adam.t = 17;
        adam.m[2][0] = 0.5;
        let c = Checkpoint { model, adam, epoch: 9 };
        let back = Checkpoint::from_archive(&TensorArchive::from_bytes(&c.to_archive().unwrap().to_bytes().unwrap()).unwrap()).unwrap();
        assert_eq!(back, c);
    }
}
