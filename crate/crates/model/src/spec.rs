//! Parameter layouts shared by both models.

use hava_nn::{Initializer, ParameterSet, Tensor};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub(crate) enum Init {
    Glorot { fan_in: usize, fan_out: usize },
    Zeros,
    /// LSTM bias: zeros with the forget-gate block set to one.
    ForgetBias { hidden: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct ParamSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub init: Init,
}

impl ParamSpec {
    pub fn glorot(name: String, shape: Vec<usize>, fan_in: usize, fan_out: usize) -> Self {
        Self {
            name,
            shape,
            init: Init::Glorot { fan_in, fan_out },
        }
    }

    pub fn zeros(name: String, shape: Vec<usize>) -> Self {
        Self {
            name,
            shape,
            init: Init::Zeros,
        }
    }

    /// Dense layer `in → out` as `<prefix>.w` and `<prefix>.b`.
    pub fn dense(prefix: &str, fan_in: usize, fan_out: usize) -> [Self; 2] {
        [
            Self::glorot(format!("{prefix}.w"), vec![fan_in, fan_out], fan_in, fan_out),
            Self::zeros(format!("{prefix}.b"), vec![fan_out]),
        ]
    }

    /// 1-D convolution `c_in → c_out` with kernel width `k`.
    pub fn conv(prefix: &str, c_in: usize, c_out: usize, k: usize) -> [Self; 2] {
        [
            Self::glorot(format!("{prefix}.w"), vec![c_out, c_in, k], c_in * k, c_out * k),
            Self::zeros(format!("{prefix}.b"), vec![c_out]),
        ]
    }
}

pub(crate) fn build_params(specs: &[ParamSpec], seed: u64) -> Result<ParameterSet> {
    let mut init = Initializer::new(seed);
    let mut params = ParameterSet::new(seed);
    for s in specs {
        let value = match s.init {
            Init::Glorot { fan_in, fan_out } => init.glorot(&s.shape, fan_in, fan_out),
            Init::Zeros => Tensor::zeros(&s.shape),
            Init::ForgetBias { hidden } => {
                let mut t = Tensor::zeros(&s.shape);
                t.data_mut()[hidden..2 * hidden].fill(1.0);
                t
            }
        };
        params.insert(s.name.clone(), value)?;
    }
    Ok(params)
}

/// Checks that `params` holds exactly the specified names and shapes,
/// reporting the first offending entry in layout order.
pub(crate) fn check_params(specs: &[ParamSpec], params: &ParameterSet) -> Result<()> {
    for s in specs {
        let p = params
            .get(&s.name)
            .map_err(|_| Error::Shape(format!("missing parameter `{}`", s.name)))?;
        if p.value.shape() != s.shape.as_slice() {
            return Err(Error::Shape(format!(
                "parameter `{}` has shape {:?}, config expects {:?}",
                s.name,
                p.value.shape(),
                s.shape
            )));
        }
    }
    if params.len() != specs.len() {
        let extra = params
            .names()
            .find(|n| !specs.iter().any(|s| &s.name == *n))
            .cloned()
            .unwrap_or_default();
        return Err(Error::Shape(format!("unexpected parameter `{extra}`")));
    }
    Ok(())
}
