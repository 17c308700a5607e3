//! Named parameter storage, initialization helpers and per-forward binding
//! onto a tape.

use indexmap::IndexMap;

use crate::autograd::{Tape, Var};
use crate::error::{ensure, Error, Result};
use crate::rng::Prng;
use crate::tensor::{Element, Tensor};

/// Ordered name -> tensor map. Insertion order is the canonical order used
/// by checkpoints and the optimizer.
#[derive(Clone, Debug, PartialEq)]
pub struct Params<T: Element> {
    map: IndexMap<String, Tensor<T>>,
}

impl<T: Element> Default for Params<T> {
    fn default() -> Self {
        Self {
            map: IndexMap::new(),
        }
    }
}

impl<T: Element> Params<T> {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor<T>) -> Result<()> {
        let name = name.into();
        ensure!(!self.map.contains_key(&name), "duplicate parameter {}", name);
        self.map.insert(name, value);
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.map.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor<T>> {
        self.map.get_mut(name)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.map.contains_key(name)
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    /// Total number of scalar values.
    pub fn num_elements(&self) -> usize {
        self.map.values().map(Tensor::len).sum()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.map.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.map.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Tensor<T>)> {
        self.map.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    pub fn cast<U: Element>(&self) -> Params<U> {
        Params {
            map: self
                .map
                .iter()
                .map(|(k, v)| (k.clone(), v.cast()))
                .collect(),
        }
    }

    /// Bind every parameter onto `tape`. With `trainable` the leaves are
    /// tracked and collect gradients.
    pub fn bind<'t>(&self, tape: &'t Tape<T>, trainable: bool) -> Bound<'t, T> {
        let vars = self
            .map
            .iter()
            .map(|(k, v)| {
                let var = if trainable {
                    tape.param(v.clone())
                } else {
                    tape.constant(v.clone())
                };
                (k.clone(), var)
            })
            .collect();
        Bound { vars }
    }
}

/// Parameters bound onto one tape for one forward pass.
pub struct Bound<'t, T: Element> {
    vars: IndexMap<String, Var<'t, T>>,
}

impl<'t, T: Element> Bound<'t, T> {
    pub fn from_pairs(pairs: impl IntoIterator<Item = (String, Var<'t, T>)>) -> Self {
        Self {
            vars: pairs.into_iter().collect(),
        }
    }

    pub fn get(&self, name: &str) -> Result<&Var<'t, T>> {
        self.vars
            .get(name)
            .ok_or_else(|| Error::Contract(format!("missing parameter {name}")))
    }

    pub fn try_get(&self, name: &str) -> Option<&Var<'t, T>> {
        self.vars.get(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Var<'t, T>)> {
        self.vars.iter().map(|(k, v)| (k.as_str(), v))
    }
}

/// Builds a parameter set in a fixed order from one random stream.
pub struct Init<'a, T: Element> {
    pub params: Params<T>,
    rng: &'a mut Prng,
}

impl<'a, T: Element> Init<'a, T> {
    pub fn new(rng: &'a mut Prng) -> Self {
        Self {
            params: Params::new(),
            rng,
        }
    }

    /// Convolution weight `[c_out, c_in_per_group, kh, kw]` drawn from
    /// N(0, 1 / fan_in), plus a zero bias when requested.
    pub fn conv(
        &mut self,
        name: &str,
        c_out: usize,
        c_in_per_group: usize,
        k: usize,
        bias: bool,
    ) -> Result<()> {
        let fan_in = c_in_per_group * k * k;
        let w = Tensor::randn(
            &[c_out, c_in_per_group, k, k],
            1.0 / (fan_in as f64).sqrt(),
            self.rng,
        );
        self.params.insert(format!("{name}.weight"), w)?;
        if bias {
            self.params.insert(format!("{name}.bias"), Tensor::zeros(&[c_out]))?;
        }
        Ok(())
    }

    /// Transposed convolution weight `[c_in, c_out, k, k]`; fan-in counts the
    /// taps that reach one output pixel at stride `k`.
    pub fn conv_t(&mut self, name: &str, c_in: usize, c_out: usize, k: usize) -> Result<()> {
        let w = Tensor::randn(&[c_in, c_out, k, k], 1.0 / (c_in as f64).sqrt(), self.rng);
        self.params.insert(format!("{name}.weight"), w)?;
        self.params.insert(format!("{name}.bias"), Tensor::zeros(&[c_out]))
    }

    /// Zero-initialized convolution with bias.
    pub fn conv_zero(&mut self, name: &str, c_out: usize, c_in: usize, k: usize) -> Result<()> {
        self.params
            .insert(format!("{name}.weight"), Tensor::zeros(&[c_out, c_in, k, k]))?;
        self.params.insert(format!("{name}.bias"), Tensor::zeros(&[c_out]))
    }

    pub fn norm(&mut self, name: &str, c: usize) -> Result<()> {
        self.params.insert(format!("{name}.gamma"), Tensor::ones(&[c]))?;
        self.params.insert(format!("{name}.beta"), Tensor::zeros(&[c]))
    }

    pub fn tensor(&mut self, name: &str, value: Tensor<T>) -> Result<()> {
        self.params.insert(name, value)
    }
}

/// Convolution layer `name` (uses `name.weight` and, if present, `name.bias`).
pub fn conv<'t, T: Element>(
    b: &Bound<'t, T>,
    name: &str,
    x: &Var<'t, T>,
    stride: usize,
    padding: usize,
    groups: usize,
) -> Result<Var<'t, T>> {
    let w = b.get(&format!("{name}.weight"))?;
    let bias = b.try_get(&format!("{name}.bias"));
    x.conv2d(w, bias, stride, padding, groups)
}

/// Depthwise convolution with "same" padding for odd `k`.
pub fn dwconv<'t, T: Element>(b: &Bound<'t, T>, name: &str, x: &Var<'t, T>) -> Result<Var<'t, T>> {
    let w = b.get(&format!("{name}.weight"))?;
    let k = w.shape()[2];
    let c = x.shape()[1];
    conv(b, name, x, 1, k / 2, c)
}

pub fn conv_t<'t, T: Element>(
    b: &Bound<'t, T>,
    name: &str,
    x: &Var<'t, T>,
    stride: usize,
) -> Result<Var<'t, T>> {
    let w = b.get(&format!("{name}.weight"))?;
    let bias = b.try_get(&format!("{name}.bias"));
    x.conv_transpose2d(w, bias, stride, 1)
}

/// Layer norm over the channel axis of an NCHW tensor.
pub fn norm<'t, T: Element>(b: &Bound<'t, T>, name: &str, x: &Var<'t, T>) -> Result<Var<'t, T>> {
    let g = b.get(&format!("{name}.gamma"))?;
    let be = b.get(&format!("{name}.beta"))?;
    x.layer_norm(1, g, be, 1e-5)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn duplicate_names_rejected() {
        let mut p = Params::<f32>::new();
        p.insert("a", Tensor::zeros(&[1])).unwrap();
        assert!(p.insert("a", Tensor::zeros(&[2])).is_err());
        assert_eq!(p.len(), 1);
    }

    #[test]
    fn init_is_seeded() {
        let build = |seed| {
            let mut rng = Prng::new(seed);
            let mut init = Init::<f32>::new(&mut rng);
            init.conv("c", 4, 3, 3, true).unwrap();
            init.params
        };
        assert_eq!(build(5), build(5));
        assert_ne!(build(5), build(6));
        let p = build(5);
        assert_eq!(p.names().collect::<Vec<_>>(), vec!["c.weight", "c.bias"]);
        assert_eq!(p.num_elements(), 4 * 3 * 9 + 4);
    }

    #[test]
    fn bound_lookup() {
        let mut p = Params::<f64>::new();
        p.insert("w", Tensor::ones(&[2])).unwrap();
        let tape = Tape::new();
        let b = p.bind(&tape, true);
        assert!(b.get("w").unwrap().is_tracked());
        assert!(b.get("nope").is_err());
        let frozen = p.bind(&tape, false);
        assert!(!frozen.get("w").unwrap().is_tracked());
    }
}
