//! A complete model description: point source, kernel, boundary and builder.

use serde::{Deserialize, Serialize};

use crate::config::Config;
use crate::domain::{Boundary, BoxDomain};
use crate::error::{param, Result};
use crate::graph::{build_graph_cells, build_graph_naive, default_cell_side, GeoGraph};
use crate::kernels::KernelSpec;
use crate::point_process::{attach_marks, palm_condition, sample_lattice, sample_poisson, MarkedCloud, PointCloud};
use crate::rng::{derive_seed, Purpose};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PointSource {
    Poisson { intensity: f64 },
    Lattice { retention: f64 },
}

impl PointSource {
    pub fn sample(&self, domain: &BoxDomain, seed: u64) -> Result<PointCloud> {
        match *self {
            PointSource::Poisson { intensity } => sample_poisson(domain, intensity, seed),
            PointSource::Lattice { retention } => sample_lattice(domain, retention, seed),
        }
    }

    pub fn intensity(&self) -> f64 {
        match *self {
            PointSource::Poisson { intensity } => intensity,
            PointSource::Lattice { retention } => retention,
        }
    }
}

impl std::str::FromStr for PointSource {
    type Err = crate::Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.parse::<crate::point_process::Source>()? {
            crate::point_process::Source::Poisson { intensity } => Ok(PointSource::Poisson { intensity }),
            crate::point_process::Source::Lattice { retention } => Ok(PointSource::Lattice { retention }),
            crate::point_process::Source::Explicit => param("an explicit source cannot be sampled"),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Builder {
    Naive,
    /// Cell-list builder with cells of four mean spacings.
    #[default]
    Cells,
    CellsWithSide { side: f64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub source: PointSource,
    pub kernel: KernelSpec,
    pub boundary: Boundary,
    pub builder: Builder,
}

impl ModelConfig {
    pub fn new(source: PointSource, kernel: KernelSpec) -> Self {
        ModelConfig { source, kernel, boundary: Boundary::Free, builder: Builder::Cells }
    }

    pub fn with_builder(mut self, builder: Builder) -> Self {
        self.builder = builder;
        self
    }

    pub fn with_boundary(mut self, boundary: Boundary) -> Self {
        self.boundary = boundary;
        self
    }

    pub fn dim(&self) -> usize {
        self.kernel.dim
    }

    /// Read the `model` and `kernel` sections.
    pub fn from_config(config: &Config) -> Result<Self> {
        let m = config.require_section("model")?;
        let dim = m.get_usize("dim")?.unwrap_or(2);
        let kernel = KernelSpec::from_section(config.require_section("kernel")?, dim)?;
        if kernel.dim != dim {
            return param(format!("kernel dimension {} differs from model dimension {dim}", kernel.dim));
        }
        let source: PointSource = m.get_str("source").unwrap_or("poisson(1)").parse()?;
        let boundary: Boundary = m.get_str("boundary").unwrap_or("free").parse()?;
        let builder = match (m.get_str("builder").unwrap_or("cells"), m.get_f64("cell_side")?) {
            ("naive", _) => Builder::Naive,
            ("cells", None) => Builder::Cells,
            ("cells", Some(side)) => Builder::CellsWithSide { side },
            (other, _) => return param(format!("unknown builder `{other}`")),
        };
        Ok(ModelConfig { source, kernel, boundary, builder })
    }

    /// The box `(-n/2, n/2]^d` with the model's boundary.
    pub fn domain(&self, n: f64) -> Result<BoxDomain> {
        Ok(BoxDomain::centered_cube(self.dim(), n)?.with_boundary(self.boundary))
    }

    /// Marked cloud on `domain`; locations and marks come from seeds derived from `seed`.
    pub fn sample_cloud(&self, domain: &BoxDomain, seed: u64) -> Result<MarkedCloud> {
        let pts = self.source.sample(domain, derive_seed(seed, Purpose::Points, 0))?;
        Ok(attach_marks(pts, derive_seed(seed, Purpose::Marks, 0)))
    }

    pub fn sample_palm_cloud(&self, domain: &BoxDomain, seed: u64) -> Result<MarkedCloud> {
        palm_condition(&self.sample_cloud(domain, seed)?)
    }

    pub fn build(&self, cloud: &MarkedCloud, seed: u64) -> Result<GeoGraph> {
        let edge_seed = derive_seed(seed, Purpose::Edges, 0);
        match self.builder {
            Builder::Naive => build_graph_naive(cloud, &self.kernel, edge_seed),
            Builder::Cells => {
                let side = default_cell_side(self.source.intensity().max(1e-12), self.dim());
                build_graph_cells(cloud, &self.kernel, side, edge_seed)
            }
            Builder::CellsWithSide { side } => build_graph_cells(cloud, &self.kernel, side, edge_seed),
        }
    }

    /// Sample the (optionally Palm) graph on the centred box of side `n`.
    pub fn sample_graph(&self, n: f64, seed: u64, palm: bool) -> Result<GeoGraph> {
        let dom = self.domain(n)?;
        let cloud = if palm { self.sample_palm_cloud(&dom, seed)? } else { self.sample_cloud(&dom, seed)? };
        self.build(&cloud, seed)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn from_config_reads_sections() {
        let c = Config::parse(
            "model { dim = 1, source = lattice(0.5), builder = naive }\nkernel { family = long_range, beta = 1, delta = 2 }",
        )
        .unwrap();
        let m = ModelConfig::from_config(&c).unwrap();
        assert_eq!(m.source, PointSource::Lattice { retention: 0.5 });
        assert_eq!(m.builder, Builder::Naive);
        assert_eq!(m.kernel.dim, 1);
    }

    #[test]
    fn palm_graph_has_origin() {
        let m = ModelConfig::new(PointSource::Poisson { intensity: 1.0 }, KernelSpec::long_range(2, 1.0, 1.5).unwrap());
        let g = m.sample_graph(6.0, 3, true).unwrap();
        assert!(g.cloud().origin_index().is_some());
        assert_eq!(g, m.sample_graph(6.0, 3, true).unwrap());
    }
}
