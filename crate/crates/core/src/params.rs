//! Named parameter arrays grouped by trainable component.

use std::collections::{BTreeMap, HashMap};

use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::autodiff::{Tape, Var};
use crate::tensor::Matrix;

/// Parameter groups that a training stage can freeze or unfreeze.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Component {
    AlphaConv,
    LrEncoderTrunk,
    HrEncoder1,
    HrEncoder2,
    Adapter,
    Decoder,
}

impl Component {
    pub const ALL: [Component; 6] = [
        Component::AlphaConv,
        Component::LrEncoderTrunk,
        Component::HrEncoder1,
        Component::HrEncoder2,
        Component::Adapter,
        Component::Decoder,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Component::AlphaConv => "alpha_conv",
            Component::LrEncoderTrunk => "lr_encoder_trunk",
            Component::HrEncoder1 => "hr_encoder_1",
            Component::HrEncoder2 => "hr_encoder_2",
            Component::Adapter => "adapter",
            Component::Decoder => "decoder",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Param {
    pub component: Component,
    pub value: Matrix,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ParamStore {
    entries: BTreeMap<String, Param>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, component: Component, value: Matrix) {
        self.entries.insert(name.into(), Param { component, value });
    }

    pub fn contains(&self, name: &str) -> bool {
        self.entries.contains_key(name)
    }

    /// Panics on unknown names: every lookup is generated by model code.
    pub fn get(&self, name: &str) -> &Matrix {
        &self
            .entries
            .get(name)
            .unwrap_or_else(|| panic!("unknown parameter {name}"))
            .value
    }

    pub fn get_mut(&mut self, name: &str) -> &mut Matrix {
        &mut self
            .entries
            .get_mut(name)
            .unwrap_or_else(|| panic!("unknown parameter {name}"))
            .value
    }

    pub fn component(&self, name: &str) -> Option<Component> {
        self.entries.get(name).map(|p| p.component)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Param)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn num_scalars(&self) -> usize {
        self.entries.values().map(|p| p.value.len()).sum()
    }

    /// SHA-256 over names and the exact bit patterns of every value, in name order.
    pub fn checksum(&self) -> String {
        self.checksum_where(|_| true)
    }

    pub fn checksum_of(&self, component: Component) -> String {
        self.checksum_where(|c| c == component)
    }

    fn checksum_where(&self, keep: impl Fn(Component) -> bool) -> String {
        let mut h = Sha256::new();
        for (name, p) in &self.entries {
            if !keep(p.component) {
                continue;
            }
            h.update(name.as_bytes());
            h.update((p.value.rows() as u64).to_le_bytes());
            h.update((p.value.cols() as u64).to_le_bytes());
            for v in p.value.data() {
                h.update(v.to_bits().to_le_bytes());
            }
        }
        hex::encode(h.finalize())
    }

    /// Zeroes every parameter of `component`.
    pub fn zero_component(&mut self, component: Component) {
        for p in self.entries.values_mut() {
            if p.component == component {
                p.value.data_mut().fill(0.0);
            }
        }
    }

    /// Places every parameter on `tape`; those whose component passes
    /// `trainable` become gradient-requiring leaves.
    pub fn bind(&self, tape: &mut Tape, trainable: impl Fn(Component) -> bool) -> Bindings {
        let vars = self
            .entries
            .iter()
            .map(|(name, p)| {
                let v = tape.leaf(p.value.clone(), trainable(p.component));
                (name.clone(), v)
            })
            .collect();
        Bindings { vars }
    }
}

/// Tape handles for a bound [`ParamStore`].
#[derive(Debug, Clone)]
pub struct Bindings {
    vars: HashMap<String, Var>,
}

impl Bindings {
    pub fn var(&self, name: &str) -> Var {
        *self
            .vars
            .get(name)
            .unwrap_or_else(|| panic!("parameter {name} is not bound"))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, Var)> {
        self.vars.iter().map(|(k, v)| (k.as_str(), *v))
    }
}

/// Uniform initialization in `[-1/sqrt(fan_in), 1/sqrt(fan_in)]`.
pub fn init_uniform(rng: &mut impl Rng, rows: usize, cols: usize, fan_in: usize) -> Matrix {
    let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
    Matrix::from_vec(
        rows,
        cols,
        (0..rows * cols).map(|_| rng.gen_range(-bound..bound)).collect(),
    )
}

pub fn init_scaled(rng: &mut impl Rng, rows: usize, cols: usize, scale: f64) -> Matrix {
    Matrix::from_vec(
        rows,
        cols,
        (0..rows * cols).map(|_| rng.gen_range(-scale..scale)).collect(),
    )
}

impl ParamStore {
    /// Copies every same-named array from `other` (e.g. converted pretrained
    /// weights) into this store; returns how many were replaced.
    pub fn overlay(&mut self, other: &ParamStore) -> crate::error::Result<usize> {
        let mut n = 0;
        for (name, p) in &other.entries {
            if let Some(mine) = self.entries.get_mut(name) {
                if mine.value.shape() != p.value.shape() {
                    return Err(crate::error::Error::Shape(format!(
                        "{name}: stored {:?}, incoming {:?}",
                        mine.value.shape(),
                        p.value.shape()
                    )));
                }
                mine.value = p.value.clone();
                n += 1;
            }
        }
        Ok(n)
    }
}
