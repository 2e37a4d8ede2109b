//! Neuron address space and interventions.
//!
//! A neuron is one output channel of a named activation site. Three sites
//! exist per layer: the MLP down projection output, the post-activation MLP
//! hidden state and the attention output projection. Embedding and norm
//! channels are not part of the neuron space.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::ModelConfig;

/// Activation site kind. Variant order is the canonical enumeration order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SiteKind {
    MlpDownOut,
    MlpAct,
    AttnOOut,
}

impl SiteKind {
    pub const ALL: [SiteKind; 3] = [SiteKind::MlpDownOut, SiteKind::MlpAct, SiteKind::AttnOOut];

    pub fn width(self, config: &ModelConfig) -> usize {
        match self {
            SiteKind::MlpDownOut | SiteKind::AttnOOut => config.d_model,
            SiteKind::MlpAct => config.d_mlp,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            SiteKind::MlpDownOut => "mlp_down_out",
            SiteKind::MlpAct => "mlp_act",
            SiteKind::AttnOOut => "attn_o_out",
        }
    }
}

impl fmt::Display for SiteKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SiteKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mlp_down_out" => Ok(SiteKind::MlpDownOut),
            "mlp_act" => Ok(SiteKind::MlpAct),
            "attn_o_out" => Ok(SiteKind::AttnOOut),
            other => Err(Error::Input(format!("unknown site kind `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct SiteId {
    pub layer: usize,
    pub kind: SiteKind,
}

impl SiteId {
    pub fn new(layer: usize, kind: SiteKind) -> Self {
        Self { layer, kind }
    }

    pub fn width(&self, config: &ModelConfig) -> usize {
        self.kind.width(config)
    }

    /// Every site of the model in canonical order.
    pub fn all(config: &ModelConfig) -> Vec<SiteId> {
        (0..config.n_layers)
            .flat_map(|layer| {
                SiteKind::ALL
                    .iter()
                    .map(move |&kind| SiteId { layer, kind })
            })
            .collect()
    }

    pub fn validate(&self, config: &ModelConfig) -> Result<()> {
        if self.layer >= config.n_layers {
            return Err(Error::Addressing(format!(
                "layer {} out of range for {} layers",
                self.layer, config.n_layers
            )));
        }
        Ok(())
    }
}

impl fmt::Display for SiteId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "L{}.{}", self.layer, self.kind)
    }
}

/// One scalar activation channel. Serializes flat as
/// `{"layer": .., "site": "mlp_down_out", "index": ..}`; the derived ordering
/// is the canonical one (layer, then site kind, then index).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct NeuronId {
    pub layer: usize,
    pub site: SiteKind,
    pub index: usize,
}

impl NeuronId {
    pub fn new(layer: usize, site: SiteKind, index: usize) -> Self {
        Self { layer, site, index }
    }

    pub fn site_id(&self) -> SiteId {
        SiteId::new(self.layer, self.site)
    }

    pub fn validate(&self, config: &ModelConfig) -> Result<()> {
        self.site_id().validate(config)?;
        let width = self.site.width(config);
        if self.index >= width {
            return Err(Error::Addressing(format!(
                "neuron {self} index out of range for site width {width}"
            )));
        }
        Ok(())
    }

    /// Position of this neuron in [`enumerate_neurons`] order.
    pub fn canonical_index(&self, config: &ModelConfig) -> usize {
        let per_layer = neurons_per_layer(config);
        let offset = match self.site {
            SiteKind::MlpDownOut => 0,
            SiteKind::MlpAct => config.d_model,
            SiteKind::AttnOOut => config.d_model + config.d_mlp,
        };
        self.layer * per_layer + offset + self.index
    }
}

impl fmt::Display for NeuronId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "L{}.{}[{}]", self.layer, self.site, self.index)
    }
}

fn neurons_per_layer(config: &ModelConfig) -> usize {
    2 * config.d_model + config.d_mlp
}

pub fn neuron_count(config: &ModelConfig) -> usize {
    config.n_layers * neurons_per_layer(config)
}

/// All neurons in canonical order: by layer, then `mlp_down_out`, `mlp_act`,
/// `attn_o_out`, then channel index.
pub fn enumerate_neurons(config: &ModelConfig) -> Vec<NeuronId> {
    let mut out = Vec::with_capacity(neuron_count(config));
    for site in SiteId::all(config) {
        for index in 0..site.width(config) {
            out.push(NeuronId::new(site.layer, site.kind, index));
        }
    }
    out
}

/// A set of neurons whose activations are rewritten as `beta * a + delta` at
/// every sequence position. `beta = 0, delta = 0` is masking; `beta = 1,
/// delta = 0` is the identity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InterventionSpec {
    pub neurons: BTreeSet<NeuronId>,
    pub beta: f32,
    #[serde(default, skip_serializing_if = "is_zero")]
    pub delta: f32,
}

fn is_zero(v: &f32) -> bool {
    *v == 0.0
}

impl InterventionSpec {
    pub fn scale<I: IntoIterator<Item = NeuronId>>(neurons: I, beta: f32) -> Self {
        Self {
            neurons: neurons.into_iter().collect(),
            beta,
            delta: 0.0,
        }
    }

    pub fn mask<I: IntoIterator<Item = NeuronId>>(neurons: I) -> Self {
        Self::scale(neurons, 0.0)
    }

    /// Additive shift `a + delta`, used by finite-difference attribution.
    pub fn shift<I: IntoIterator<Item = NeuronId>>(neurons: I, delta: f32) -> Self {
        Self {
            neurons: neurons.into_iter().collect(),
            beta: 1.0,
            delta,
        }
    }

    pub fn is_identity(&self) -> bool {
        self.neurons.is_empty() || (self.beta == 1.0 && self.delta == 0.0)
    }

    pub fn validate(&self, config: &ModelConfig) -> Result<()> {
        if !self.beta.is_finite() || !self.delta.is_finite() {
            return Err(Error::Input(format!(
                "intervention parameters must be finite (beta={}, delta={})",
                self.beta, self.delta
            )));
        }
        self.neurons.iter().try_for_each(|n| n.validate(config))
    }

    #[inline]
    fn rewrite(&self, v: f32) -> f32 {
        let mut out = v;
        if self.beta != 1.0 {
            out *= self.beta;
        }
        if self.delta != 0.0 {
            out += self.delta;
        }
        out
    }
}

/// Applies `spec` to one row of activations at `site`. Channels not named by
/// the spec are left untouched.
pub fn apply_intervention(row: &[f32], spec: &InterventionSpec, site: SiteId) -> Vec<f32> {
    let mut out = row.to_vec();
    for n in spec.neurons.iter().filter(|n| n.site_id() == site) {
        out[n.index] = spec.rewrite(out[n.index]);
    }
    out
}

/// Interventions grouped by site, validated against one config. Specs are
/// applied in the order given.
#[derive(Debug, Default)]
pub(crate) struct InterventionPlan<'a> {
    by_site: BTreeMap<SiteId, Vec<(&'a InterventionSpec, Vec<usize>)>>,
}

impl<'a> InterventionPlan<'a> {
    pub(crate) fn new(specs: &'a [InterventionSpec], config: &ModelConfig) -> Result<Self> {
        let mut by_site: BTreeMap<SiteId, Vec<(&'a InterventionSpec, Vec<usize>)>> =
            BTreeMap::new();
        for spec in specs {
            spec.validate(config)?;
            if spec.is_identity() {
                continue;
            }
            let mut grouped: BTreeMap<SiteId, Vec<usize>> = BTreeMap::new();
            for n in &spec.neurons {
                grouped.entry(n.site_id()).or_default().push(n.index);
            }
            for (site, idx) in grouped {
                by_site.entry(site).or_default().push((spec, idx));
            }
        }
        Ok(Self { by_site })
    }

    /// Rewrites the addressed channels of a `(T, width)` activation buffer in
    /// place, at every position.
    pub(crate) fn apply(&self, site: SiteId, data: &mut [f32], width: usize) {
        let Some(entries) = self.by_site.get(&site) else {
            return;
        };
        for row in data.chunks_exact_mut(width) {
            for (spec, idx) in entries {
                for &i in idx {
                    row[i] = spec.rewrite(row[i]);
                }
            }
        }
    }
}
