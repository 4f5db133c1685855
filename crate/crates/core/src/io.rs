//! File formats: the binary matrix container, TOML problem/solver
//! configuration, and TOML/JSON reports.
//!
//! Matrix files are a 14-byte header followed by the payload:
//!
//! | bytes | content                         |
//! |-------|---------------------------------|
//! | 0..4  | magic `SBSS`                    |
//! | 4..6  | version, `u16` little-endian (1) |
//! | 6..10 | rows, `u32` little-endian        |
//! | 10..14| cols, `u32` little-endian        |
//! | 14..  | `rows·cols` `f64` little-endian, row-major |

use crate::datagen::SyntheticSpec;
use crate::error::{Result, SbssError};
use crate::gmca::GmcaConfig;
use crate::hybrid::{LambdaSeed, RefinementThresholds, TwoStepConfig};
use crate::mat::Mat;
use crate::palm::PalmConfig;
use crate::starlet::Geometry;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use std::fs;
use std::path::Path;

pub const MAGIC: &[u8; 4] = b"SBSS";
pub const VERSION: u16 = 1;
const HEADER_LEN: usize = 14;

pub fn encode_matrix(m: &Mat) -> Result<Vec<u8>> {
    let rows = u32::try_from(m.rows()).map_err(|_| SbssError::Format("too many rows".into()))?;
    let cols = u32::try_from(m.cols()).map_err(|_| SbssError::Format("too many columns".into()))?;
    let mut out = Vec::with_capacity(HEADER_LEN + 8 * m.as_slice().len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&rows.to_le_bytes());
    out.extend_from_slice(&cols.to_le_bytes());
    for v in m.as_slice() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

pub fn decode_matrix(bytes: &[u8]) -> Result<Mat> {
    if bytes.len() < HEADER_LEN {
        return Err(SbssError::Format(format!(
            "{} bytes is shorter than the {HEADER_LEN}-byte header",
            bytes.len()
        )));
    }
    if &bytes[0..4] != MAGIC {
        return Err(SbssError::Format("bad magic (expected SBSS)".into()));
    }
    let version = u16::from_le_bytes([bytes[4], bytes[5]]);
    if version != VERSION {
        return Err(SbssError::Format(format!("unsupported version {version}")));
    }
    let rows = u32::from_le_bytes(bytes[6..10].try_into().unwrap()) as usize;
    let cols = u32::from_le_bytes(bytes[10..14].try_into().unwrap()) as usize;
    let expected = rows
        .checked_mul(cols)
        .and_then(|n| n.checked_mul(8))
        .ok_or_else(|| SbssError::Format("header dimensions overflow".into()))?;
    let payload = &bytes[HEADER_LEN..];
    if payload.len() != expected {
        return Err(SbssError::Format(format!(
            "payload is {} bytes, header {rows}x{cols} needs {expected}",
            payload.len()
        )));
    }
    let data: Vec<f64> = payload
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    if let Some(i) = data.iter().position(|v| !v.is_finite()) {
        return Err(SbssError::Format(format!("non-finite value at element {i}")));
    }
    Mat::new(rows, cols, data)
}

/// Attaches the path to an I/O error.
pub fn with_path(path: &Path) -> impl FnOnce(std::io::Error) -> SbssError + '_ {
    move |e| SbssError::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display())))
}

pub fn read_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(with_path(path))
}

pub fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(with_path(path))
}

pub fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, contents).map_err(with_path(path))
}

pub fn write_matrix(path: &Path, m: &Mat) -> Result<()> {
    write_file(path, encode_matrix(m)?)
}

pub fn read_matrix(path: &Path) -> Result<Mat> {
    decode_matrix(&read_file(path)?).map_err(|e| match e {
        SbssError::Format(msg) => SbssError::Format(format!("{}: {msg}", path.display())),
        other => other,
    })
}

fn config_error(e: toml::de::Error) -> SbssError {
    let message = e.to_string();
    let msg = e.message();
    // toml names the offending key in backticks for unknown/missing fields
    let field = msg
        .split('`')
        .nth(1)
        .map(str::to_string)
        .unwrap_or_else(|| "<document>".to_string());
    SbssError::Config {
        field,
        message: message.trim_end().to_string(),
    }
}

pub fn parse_toml<T: DeserializeOwned>(text: &str) -> Result<T> {
    toml::from_str(text).map_err(config_error)
}

pub fn to_toml<T: Serialize>(value: &T) -> Result<String> {
    toml::to_string(value).map_err(|e| SbssError::Format(e.to_string()))
}

pub fn read_synthetic_spec(path: &Path) -> Result<SyntheticSpec> {
    let spec: SyntheticSpec = parse_toml(&read_text(path)?)?;
    spec.validate()?;
    Ok(spec)
}

/// Image geometry section of a solver configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeometrySection {
    pub width: usize,
    pub height: usize,
    #[serde(default = "default_scales")]
    pub n_scales: usize,
}

fn default_scales() -> usize {
    3
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GmcaSection {
    pub n_iters: usize,
    pub k_final: f64,
    pub k_start: f64,
    pub ridge: f64,
}

impl Default for GmcaSection {
    fn default() -> Self {
        let d = GmcaConfig::default();
        Self {
            n_iters: d.n_iters,
            k_final: d.k_final,
            k_start: d.k_start,
            ridge: d.ridge,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PalmSection {
    pub n_iters: usize,
    pub gamma: f64,
    pub k_mad: f64,
    pub tol_objective: f64,
    pub ridge: f64,
    pub spectral_tol: f64,
    pub spectral_max_iter: usize,
    pub safeguard: bool,
    pub prox_max_iter: usize,
}

impl Default for PalmSection {
    fn default() -> Self {
        let d = TwoStepConfig::default().palm;
        Self {
            n_iters: d.n_iters,
            gamma: d.gamma,
            k_mad: d.k_mad,
            tol_objective: d.tol_objective,
            ridge: d.ridge,
            spectral_tol: d.spectral_tol,
            spectral_max_iter: d.spectral_max_iter,
            safeguard: d.safeguard,
            prox_max_iter: d.prox_max_iter,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TwoStepSection {
    pub epsilon: f64,
    pub use_reweighting: bool,
    pub refinement: RefinementThresholds,
    pub lambda_seed: LambdaSeed,
}

impl Default for TwoStepSection {
    fn default() -> Self {
        let d = TwoStepConfig::default();
        Self {
            epsilon: d.epsilon,
            use_reweighting: d.use_reweighting,
            refinement: d.refinement,
            lambda_seed: d.lambda_seed,
        }
    }
}

/// Solver configuration file. Every section is optional; a missing
/// `geometry` is inferred for square images.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverFile {
    pub geometry: Option<GeometrySection>,
    pub n_sources: Option<usize>,
    pub seed: Option<u64>,
    pub gmca: GmcaSection,
    pub palm: PalmSection,
    pub two_step: TwoStepSection,
}

impl SolverFile {
    pub fn read(path: &Path) -> Result<Self> {
        parse_toml(&read_text(path)?)
    }

    /// Geometry for `pixels`-column data.
    pub fn geometry_for(&self, pixels: usize) -> Result<Geometry> {
        let g = match &self.geometry {
            Some(g) => Geometry {
                width: g.width,
                height: g.height,
                n_scales: g.n_scales,
            },
            None => {
                let side = (pixels as f64).sqrt().round() as usize;
                if side * side != pixels {
                    return Err(SbssError::Config {
                        field: "geometry".into(),
                        message: format!("{pixels} pixels is not a square image; give width and height"),
                    });
                }
                Geometry {
                    width: side,
                    height: side,
                    n_scales: default_scales(),
                }
            }
        };
        if g.pixels() != pixels {
            return Err(SbssError::Config {
                field: "geometry".into(),
                message: format!("{}x{} does not match {pixels} pixels", g.width, g.height),
            });
        }
        g.validate()?;
        Ok(g)
    }

    /// Pipeline configuration; `seed` overrides the file's seed.
    pub fn two_step_config(&self, seed: Option<u64>) -> Result<TwoStepConfig> {
        let g = &self.gmca;
        let p = &self.palm;
        let t = &self.two_step;
        let base = TwoStepConfig::default();
        let cfg = TwoStepConfig {
            gmca: GmcaConfig {
                n_iters: g.n_iters,
                k_final: g.k_final,
                k_start: g.k_start,
                ridge: g.ridge,
                rng_seed: 0,
            },
            palm: PalmConfig {
                n_iters: p.n_iters,
                gamma: p.gamma,
                k_mad: p.k_mad,
                tol_objective: p.tol_objective,
                ridge: p.ridge,
                spectral_tol: p.spectral_tol,
                spectral_max_iter: p.spectral_max_iter,
                safeguard: p.safeguard,
                prox_max_iter: p.prox_max_iter,
                ..base.palm
            },
            epsilon: t.epsilon,
            use_reweighting: t.use_reweighting,
            refinement: t.refinement,
            lambda_seed: t.lambda_seed,
            n_sources: self.n_sources,
            rng_seed: seed.or(self.seed).unwrap_or(0),
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| SbssError::Format(e.to_string()))?;
    write_file(path, text + "\n")?;
    Ok(())
}
