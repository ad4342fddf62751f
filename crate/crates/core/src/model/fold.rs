use super::graph::ModelGraph;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Folds every batch-norm into its preceding convolution.
pub fn fold_bn(graph: &ModelGraph) -> Result<ModelGraph> {
    let mut g = graph.clone();
    for layer in &mut g.layers {
        let Some(bn) = layer.bn.take() else {
            layer.spec.has_bn = false;
            continue;
        };
        let w = layer.weight.as_ref().ok_or_else(|| {
            Error::Config(format!("layer `{}` has batch-norm but no weights", layer.spec.name))
        })?;
        let oc = layer.spec.out_channels;
        if [&bn.gamma, &bn.beta, &bn.mean, &bn.var].iter().any(|v| v.len() != oc) {
            return Err(Error::shape(format!("batch-norm of `{}` has wrong length", layer.spec.name)));
        }
        let per = w.len() / oc;
        let mut data = w.data().to_vec();
        if layer.bias.is_empty() {
            layer.bias = vec![0.0; oc];
        }
        for o in 0..oc {
            let var = bn.var[o] + bn.eps;
            if bn.var[o] <= 0.0 || var <= 0.0 {
                return Err(Error::Config(format!(
                    "layer `{}` channel {o}: batch-norm variance {} is not positive",
                    layer.spec.name, bn.var[o]
                )));
            }
            let s = bn.gamma[o] / var.sqrt();
            data[o * per..][..per].iter_mut().for_each(|x| *x *= s);
            layer.bias[o] = (layer.bias[o] - bn.mean[o]) * s + bn.beta[o];
        }
        layer.weight = Some(Tensor::new(w.shape().to_vec(), data)?);
        layer.spec.has_bn = false;
    }
    Ok(g)
}
