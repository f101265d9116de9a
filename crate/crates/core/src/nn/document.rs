use alloc::string::String;
use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use super::{Activation, Mlp, OutputTransform};
use crate::{Error, Result};

/// On-disk form of an [`Mlp`]: layer dimensions, activation, output
/// transform and row-major weights (`weights[k][row][col]`) and biases.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpDocument {
    pub layer_dims: Vec<usize>,
    pub activation: Activation,
    /// `linear` or `hardtanh`.
    pub output_transform: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lb: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ub: Option<Vec<f64>>,
    pub weights: Vec<Vec<Vec<f64>>>,
    pub biases: Vec<Vec<f64>>,
}

impl From<Mlp> for MlpDocument {
    fn from(net: Mlp) -> Self {
        let (output_transform, lb, ub) = match net.output_transform() {
            OutputTransform::Linear => ("linear".into(), None, None),
            OutputTransform::HardTanhClamp { lb, ub } => {
                ("hardtanh".into(), Some(lb.clone()), Some(ub.clone()))
            }
        };
        let weights = net
            .layers()
            .map(|l| l.weights.chunks(l.in_dim).map(<[f64]>::to_vec).collect())
            .collect();
        let biases = net.layers().map(|l| l.biases.to_vec()).collect();
        Self {
            layer_dims: net.layer_dims().to_vec(),
            activation: net.activation(),
            output_transform,
            lb,
            ub,
            weights,
            biases,
        }
    }
}

impl TryFrom<MlpDocument> for Mlp {
    type Error = Error;

    fn try_from(doc: MlpDocument) -> Result<Self> {
        let output = match (doc.output_transform.as_str(), doc.lb, doc.ub) {
            ("linear", _, _) => OutputTransform::Linear,
            ("hardtanh", Some(lb), Some(ub)) => OutputTransform::HardTanhClamp { lb, ub },
            ("hardtanh", _, _) => {
                return Err(Error::Config("hardtanh output needs lb and ub".into()));
            }
            (other, _, _) => {
                return Err(Error::Config(alloc::format!("unknown output transform `{other}`")));
            }
        };
        let mut net = Mlp::new(doc.layer_dims, doc.activation, output)?;
        if doc.weights.len() != net.num_layers() || doc.biases.len() != net.num_layers() {
            return Err(Error::Shape {
                context: "layer count",
                expected: net.num_layers(),
                got: doc.weights.len().min(doc.biases.len()),
            });
        }
        for (k, (rows, bias)) in doc.weights.iter().zip(&doc.biases).enumerate() {
            let (in_dim, out_dim) = (net.layer_dims()[k], net.layer_dims()[k + 1]);
            if rows.len() != out_dim || bias.len() != out_dim {
                return Err(Error::Shape {
                    context: "layer rows",
                    expected: out_dim,
                    got: if rows.len() != out_dim { rows.len() } else { bias.len() },
                });
            }
            let (w, b) = net.layer_mut(k);
            for (i, row) in rows.iter().enumerate() {
                if row.len() != in_dim {
                    return Err(Error::Shape {
                        context: "layer columns",
                        expected: in_dim,
                        got: row.len(),
                    });
                }
                w[i * in_dim..(i + 1) * in_dim].copy_from_slice(row);
            }
            b.copy_from_slice(bias);
        }
        Ok(net)
    }
}
