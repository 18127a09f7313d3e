//! Run configuration, read from a flat TOML file of `key = value` lines.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::embedding::{DEFAULT_DIM, DESCRIPTOR_DIM};
use crate::error::{Error, Result};
use crate::export::DEFAULT_RESIZE;
use crate::filter::FilterParams;
use crate::flow::FlowParams;
use crate::proposals::{ObjectnessParams, ProposalParams};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub input_root: PathBuf,
    pub output_root: PathBuf,
    pub corr_threshold: f64,
    pub intensity_limits: (f64, f64),
    pub n_proposals: usize,
    pub top_k: usize,
    pub bg_pool: usize,
    pub nms_iou: f64,
    pub scale_min: f64,
    pub scale_max: f64,
    pub scale_count: usize,
    /// Move each surviving window to a local objectness maximum.
    pub refine_proposals: bool,
    pub objectness_lambda: f64,
    pub objectness_kappa: f64,
    pub flow_alpha: f64,
    pub flow_iterations: usize,
    pub flow_levels: usize,
    pub flow_scale: f64,
    pub embedding_dim: usize,
    pub resize: (u32, u32),
    /// Keep native crop sizes instead of resizing.
    pub no_resize: bool,
    /// Worker threads; 0 uses one per core.
    pub workers: usize,
    pub seed: u64,
    /// Count the seed's own term in the cluster score.
    pub include_seed_score: bool,
    /// Read `<video>/flow/AAA_BBB.flo` when present.
    pub external_flow: bool,
    /// Read proposal embeddings from `<video>/embeddings.bin`.
    pub external_embeddings: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        let filter = FilterParams::default();
        let flow = FlowParams::default();
        let props = ProposalParams::default();
        RunConfig {
            input_root: PathBuf::from("videos"),
            output_root: PathBuf::from("mined"),
            corr_threshold: filter.corr_threshold,
            intensity_limits: filter.intensity_limits,
            n_proposals: props.n_target,
            top_k: props.top_k,
            bg_pool: 100,
            nms_iou: props.nms_iou,
            scale_min: props.scale_range.0,
            scale_max: props.scale_range.1,
            scale_count: props.scale_count,
            refine_proposals: props.refine,
            objectness_lambda: props.objectness.lambda,
            objectness_kappa: props.objectness.kappa,
            flow_alpha: flow.alpha,
            flow_iterations: flow.iterations,
            flow_levels: flow.levels,
            flow_scale: flow.scale,
            embedding_dim: DEFAULT_DIM,
            resize: DEFAULT_RESIZE,
            no_resize: false,
            workers: 1,
            seed: 0,
            include_seed_score: false,
            external_flow: false,
            external_embeddings: false,
        }
    }
}

fn check(ok: bool, what: impl FnOnce() -> String) -> Result<()> {
    if ok {
        Ok(())
    } else {
        Err(Error::Config(what()))
    }
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            e => e,
        })
    }

    pub fn validate(&self) -> Result<()> {
        check((-1.0..=1.0).contains(&self.corr_threshold), || {
            format!("corr_threshold {} outside [-1, 1]", self.corr_threshold)
        })?;
        let (lo, hi) = self.intensity_limits;
        check(0.0 <= lo && lo <= hi && hi <= 255.0, || {
            format!("intensity_limits ({lo}, {hi}) must satisfy 0 <= lo <= hi <= 255")
        })?;
        check(self.n_proposals >= 1, || "n_proposals must be at least 1".into())?;
        check(self.top_k >= 1, || "top_k must be at least 1".into())?;
        check(self.bg_pool >= 1, || "bg_pool must be at least 1".into())?;
        check(self.nms_iou > 0.0 && self.nms_iou <= 1.0, || {
            format!("nms_iou {} outside (0, 1]", self.nms_iou)
        })?;
        check(
            0.0 < self.scale_min && self.scale_min <= self.scale_max && self.scale_max <= 1.0,
            || {
                format!(
                    "scale range ({}, {}) must satisfy 0 < min <= max <= 1",
                    self.scale_min, self.scale_max
                )
            },
        )?;
        check(self.scale_count >= 1, || "scale_count must be at least 1".into())?;
        check(self.objectness_lambda >= 0.0, || {
            "objectness_lambda must be non-negative".into()
        })?;
        check(self.objectness_kappa > 0.0, || {
            "objectness_kappa must be positive".into()
        })?;
        check(self.flow_alpha > 0.0, || "flow_alpha must be positive".into())?;
        check(self.flow_iterations >= 1, || {
            "flow_iterations must be at least 1".into()
        })?;
        check(self.flow_levels >= 1, || "flow_levels must be at least 1".into())?;
        check(self.flow_scale > 0.0 && self.flow_scale < 1.0, || {
            format!("flow_scale {} outside (0, 1)", self.flow_scale)
        })?;
        check(self.embedding_dim >= DESCRIPTOR_DIM, || {
            format!(
                "embedding_dim {} below descriptor length {DESCRIPTOR_DIM}",
                self.embedding_dim
            )
        })?;
        check(self.resize.0 >= 1 && self.resize.1 >= 1, || {
            "resize sides must be positive".into()
        })?;
        Ok(())
    }

    pub fn filter_params(&self) -> FilterParams {
        FilterParams {
            corr_threshold: self.corr_threshold,
            intensity_limits: self.intensity_limits,
        }
    }

    pub fn flow_params(&self) -> FlowParams {
        FlowParams {
            alpha: self.flow_alpha,
            iterations: self.flow_iterations,
            levels: self.flow_levels,
            scale: self.flow_scale,
        }
    }

    pub fn proposal_params(&self) -> ProposalParams {
        ProposalParams {
            n_target: self.n_proposals,
            scale_range: (self.scale_min, self.scale_max),
            scale_count: self.scale_count,
            nms_iou: self.nms_iou,
            top_k: self.top_k,
            refine: self.refine_proposals,
            objectness: ObjectnessParams {
                lambda: self.objectness_lambda,
                kappa: self.objectness_kappa,
                ..ObjectnessParams::default()
            },
            ..ProposalParams::default()
        }
    }

    pub fn resize_to(&self) -> Option<(u32, u32)> {
        (!self.no_resize).then_some(self.resize)
    }

    /// The configuration as TOML, minus the settings that must not change
    /// the output (worker count, output location).
    pub fn echo(&self) -> String {
        let mut table = toml::Table::try_from(self).expect("config serializes");
        table.remove("workers");
        table.remove("output_root");
        toml::to_string(&table).expect("table serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_match_reference_constants() {
        let c = RunConfig::default();
        assert_eq!(c.corr_threshold, 0.1);
        assert_eq!(c.intensity_limits, (50.0, 200.0));
        assert_eq!((c.n_proposals, c.top_k, c.bg_pool), (500, 15, 100));
        assert_eq!(c.resize, (227, 227));
        assert_eq!(c.embedding_dim, 2048);
        c.validate().unwrap();
    }

    #[test]
    fn round_trips_through_toml() {
        let c = RunConfig {
            top_k: 7,
            no_resize: true,
            ..Default::default()
        };
        let text = toml::to_string(&c).unwrap();
        assert_eq!(RunConfig::from_toml_str(&text).unwrap(), c);
    }

    #[test]
    fn partial_file_keeps_defaults() {
        let c = RunConfig::from_toml_str("top_k = 5\nintensity_limits = [40, 210]\n").unwrap();
        assert_eq!(c.top_k, 5);
        assert_eq!(c.intensity_limits, (40.0, 210.0));
        assert_eq!(c.n_proposals, 500);
    }

    #[test]
    fn rejects_bad_values_and_keys() {
        assert!(RunConfig::from_toml_str("nms_iou = 1.5").is_err());
        assert!(RunConfig::from_toml_str("intensity_limits = [200, 50]").is_err());
        assert!(RunConfig::from_toml_str("embedding_dim = 100").is_err());
        assert!(RunConfig::from_toml_str("topk = 3").is_err());
    }

    #[test]
    fn echo_ignores_workers_and_output() {
        let a = RunConfig::default();
        let b = RunConfig {
            workers: 8,
            output_root: "elsewhere".into(),
            ..a.clone()
        };
        assert_eq!(a.echo(), b.echo());
        assert!(a.echo().contains("corr_threshold = 0.1"));
    }
}
