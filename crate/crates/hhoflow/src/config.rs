//! Strict TOML run configuration.
//!
//! Every field is optional at the serde level so that validation can report
//! all missing or inconsistent entries at once; unknown keys are errors.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use hhoflow_core::mesh::{build_cartesian_mesh, BBox, Mesh};
use hhoflow_core::pressure::ViscosityModel;
use hhoflow_core::simulator::{SimulationConfig, Stepper, Well, WellKind, MAX_DEGREE};
use hhoflow_core::{Point2, Tensor2};

use crate::error::{io_error, Error, Result};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ConfigFile {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub k: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dt: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub t_final: Option<f64>,
    /// `crank_nicolson`, `bdf2`, `bdf3` or `bdf4`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub stepper: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub injected_concentration: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub check_invariants: Option<bool>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mesh: Option<MeshSection>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub physical: Option<PhysicalSection>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub permeability: Option<PermeabilitySection>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub initial: Option<InitialSection>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub wells: Vec<WellEntry>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub output: Option<OutputSection>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MeshSection {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cartesian: Option<[usize; 2]>,
    /// `[x0, y0, x1, y1]`, used with `cartesian`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub bbox: Option<[f64; 4]>,
    /// `polymesh2d` file, relative to the config file.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub file: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PhysicalSection {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mu0: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mobility_ratio: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub d_m: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub d_l: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub d_t: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub porosity: Option<f64>,
}

/// A scalar `κ` (meaning `κ I`) or a full `[[kxx, kxy], [kyx, kyy]]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PermeabilityValue {
    Scalar(f64),
    Tensor([[f64; 2]; 2]),
}

impl PermeabilityValue {
    pub fn tensor(self) -> Tensor2 {
        match self {
            PermeabilityValue::Scalar(k) => Tensor2::identity() * k,
            PermeabilityValue::Tensor(m) => Tensor2::new(m[0][0], m[0][1], m[1][0], m[1][1]),
        }
    }

    fn check(self) -> std::result::Result<(), String> {
        let t = self.tensor();
        let sym = (t[(0, 1)] - t[(1, 0)]).abs() <= 1e-12 * t.norm();
        let det = t[(0, 0)] * t[(1, 1)] - t[(0, 1)] * t[(1, 0)];
        if t.iter().all(|v| v.is_finite()) && sym && t[(0, 0)] > 0.0 && det > 0.0 {
            Ok(())
        } else {
            Err(format!("permeability {self:?} is not symmetric positive definite"))
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PermeabilitySection {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub default: Option<PermeabilityValue>,
    /// Later regions override earlier ones; a cell belongs to a region when
    /// its centroid lies in the box.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub regions: Vec<PermeabilityRegion>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PermeabilityRegion {
    pub bbox: [f64; 4],
    pub value: PermeabilityValue,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct InitialSection {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub c0: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WellEntry {
    /// `injector` or `producer`.
    pub kind: String,
    pub x: f64,
    pub y: f64,
    pub rate: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct OutputSection {
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub snapshot_times: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum MeshSource {
    Cartesian { nx: usize, ny: usize, bbox: BBox },
    File(PathBuf),
}

impl MeshSource {
    pub fn build(&self) -> Result<Mesh> {
        match self {
            MeshSource::Cartesian { nx, ny, bbox } => Ok(build_cartesian_mesh(*nx, *ny, *bbox)?),
            MeshSource::File(p) => crate::mesh_io::read_mesh(p),
        }
    }
}

/// A validated configuration, independent of the mesh.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub mesh: MeshSource,
    pub k: usize,
    pub dt: f64,
    pub t_final: f64,
    pub stepper: Stepper,
    pub injected: f64,
    pub check_invariants: bool,
    pub viscosity: ViscosityModel,
    pub d_m: f64,
    pub d_l: f64,
    pub d_t: f64,
    pub porosity: f64,
    pub permeability: PermeabilityValue,
    pub regions: Vec<PermeabilityRegion>,
    pub c0: f64,
    pub wells: Vec<Well>,
    pub snapshot_times: Vec<f64>,
}

fn bbox_of(b: [f64; 4]) -> BBox {
    BBox::new(b[0], b[1], b[2], b[3])
}

fn parse_stepper(s: &str) -> Option<Stepper> {
    match s {
        "crank_nicolson" => Some(Stepper::CrankNicolson),
        "bdf2" => Some(Stepper::Bdf(2)),
        "bdf3" => Some(Stepper::Bdf(3)),
        "bdf4" => Some(Stepper::Bdf(4)),
        _ => None,
    }
}

pub fn stepper_name(s: Stepper) -> String {
    match s {
        Stepper::CrankNicolson => "crank_nicolson".into(),
        Stepper::Bdf(q) => format!("bdf{q}"),
    }
}

/// 1-based line of a byte offset.
fn line_of(text: &str, offset: usize) -> usize {
    text[..offset.min(text.len())].matches('\n').count() + 1
}

fn dotted(path: &serde_ignored::Path<'_>) -> String {
    use serde_ignored::Path;
    match path {
        Path::Root => String::new(),
        Path::Seq { parent, index } => format!("{}[{index}]", dotted(parent)),
        Path::Map { parent, key } => match dotted(parent) {
            p if p.is_empty() => key.clone(),
            p => format!("{p}.{key}"),
        },
        Path::Some { parent } | Path::NewtypeStruct { parent } | Path::NewtypeVariant { parent } => dotted(parent),
    }
}

fn parse_with_unknown(text: &str, source: &str) -> Result<(ConfigFile, Vec<String>)> {
    let parse_error = |e: toml::de::Error| Error::Parse {
        source_name: source.to_string(),
        line: e.span().map_or(1, |s| line_of(text, s.start)),
        message: e.message().to_string(),
    };
    let de = toml::Deserializer::parse(text).map_err(parse_error)?;
    let mut unknown = Vec::new();
    let file: ConfigFile =
        serde_ignored::deserialize(de, |path| unknown.push(format!("unknown key `{}`", dotted(&path))))
            .map_err(parse_error)?;
    Ok((file, unknown))
}

/// Parses TOML text, rejecting unknown keys. Syntax errors come back as
/// [`Error::Parse`], unknown keys as [`Error::Config`].
pub fn parse_config_file(text: &str, source: &str) -> Result<ConfigFile> {
    let (file, unknown) = parse_with_unknown(text, source)?;
    if !unknown.is_empty() {
        return Err(Error::Config { errors: unknown });
    }
    Ok(file)
}

/// Parses and validates in one go, reporting unknown keys together with
/// every validation error.
pub fn config_from_str(text: &str, source: &str, base_dir: &Path) -> Result<RunConfig> {
    let (file, mut errors) = parse_with_unknown(text, source)?;
    match file.validate(base_dir) {
        Ok(c) if errors.is_empty() => Ok(c),
        Ok(_) => Err(Error::Config { errors }),
        Err(Error::Config { errors: more }) => {
            errors.extend(more);
            Err(Error::Config { errors })
        }
        Err(e) => Err(e),
    }
}

impl ConfigFile {
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serialises")
    }

    /// Checks the file and collects every problem found. Relative mesh
    /// paths are resolved against `base_dir`.
    pub fn validate(&self, base_dir: &Path) -> Result<RunConfig> {
        let mut errors = Vec::new();
        let mut need = |v: Option<f64>, name: &str, ok: fn(f64) -> bool, what: &str| -> f64 {
            match v {
                None => {
                    errors.push(format!("missing `{name}`"));
                    f64::NAN
                }
                Some(x) if !(x.is_finite() && ok(x)) => {
                    errors.push(format!("`{name}` must be {what}, got {x}"));
                    f64::NAN
                }
                Some(x) => x,
            }
        };
        let positive = |x: f64| x > 0.0;
        let non_negative = |x: f64| x >= 0.0;

        let dt = need(self.dt, "dt", positive, "> 0");
        let t_final = need(self.t_final, "t_final", positive, "> 0");
        let injected = need(
            self.injected_concentration.or(Some(1.0)),
            "injected_concentration",
            |x| (0.0..=1.0).contains(&x),
            "in [0, 1]",
        );
        let ph = self.physical.clone().unwrap_or_default();
        let mu0 = need(ph.mu0, "physical.mu0", positive, "> 0");
        let mobility_ratio = need(ph.mobility_ratio, "physical.mobility_ratio", positive, "> 0");
        let d_m = need(ph.d_m.or(Some(0.0)), "physical.d_m", non_negative, ">= 0");
        let d_l = need(ph.d_l, "physical.d_l", positive, "> 0");
        let d_t = need(ph.d_t, "physical.d_t", positive, "> 0");
        let porosity = need(ph.porosity, "physical.porosity", positive, "> 0");
        let c0 = need(
            self.initial.as_ref().and_then(|i| i.c0).or(Some(0.0)),
            "initial.c0",
            |x| (0.0..=1.0).contains(&x),
            "in [0, 1]",
        );

        let k = match self.k {
            None => {
                errors.push("missing `k`".into());
                0
            }
            Some(k) if k > MAX_DEGREE => {
                errors.push(format!("`k` must be at most {MAX_DEGREE}, got {k}"));
                0
            }
            Some(k) => k,
        };
        if dt.is_finite() && t_final.is_finite() {
            let n = (t_final / dt).round();
            if n < 1.0 || (n * dt - t_final).abs() > 1e-9 * t_final {
                errors.push(format!("`dt` = {dt} does not divide `t_final` = {t_final}"));
            }
        }
        let stepper = match self.stepper.as_deref() {
            None => Stepper::CrankNicolson,
            Some(s) => parse_stepper(s).unwrap_or_else(|| {
                errors.push(format!("unknown stepper `{s}` (crank_nicolson, bdf2, bdf3, bdf4)"));
                Stepper::CrankNicolson
            }),
        };
        let viscosity = ViscosityModel { mu0, mobility_ratio };

        let mesh = match &self.mesh {
            None => {
                errors.push("missing `[mesh]`".into());
                None
            }
            Some(MeshSection {
                cartesian: Some([nx, ny]),
                bbox,
                file: None,
            }) => {
                let b = bbox.unwrap_or([0.0, 0.0, 1000.0, 1000.0]);
                if *nx == 0 || *ny == 0 {
                    errors.push("`mesh.cartesian` counts must be positive".into());
                }
                if !(b.iter().all(|v| v.is_finite()) && b[2] > b[0] && b[3] > b[1]) {
                    errors.push(format!("`mesh.bbox` {b:?} is degenerate"));
                }
                Some(MeshSource::Cartesian {
                    nx: *nx,
                    ny: *ny,
                    bbox: bbox_of(b),
                })
            }
            Some(MeshSection {
                cartesian: None,
                bbox: None,
                file: Some(f),
            }) => Some(MeshSource::File(base_dir.join(f))),
            Some(MeshSection {
                cartesian: None,
                bbox: Some(_),
                file: Some(_),
            }) => {
                errors.push("`mesh.bbox` only applies to `mesh.cartesian`".into());
                None
            }
            Some(_) => {
                errors.push("`[mesh]` needs exactly one of `cartesian` or `file`".into());
                None
            }
        };

        let perm = self.permeability.clone().unwrap_or_default();
        let permeability = match perm.default {
            Some(v) => v,
            None => {
                errors.push("missing `permeability.default`".into());
                PermeabilityValue::Scalar(1.0)
            }
        };
        for v in std::iter::once(permeability).chain(perm.regions.iter().map(|r| r.value)) {
            if let Err(e) = v.check() {
                errors.push(e);
            }
        }

        let mut wells = Vec::new();
        for (i, w) in self.wells.iter().enumerate() {
            let kind = match w.kind.as_str() {
                "injector" => WellKind::Injection,
                "producer" => WellKind::Production,
                other => {
                    errors.push(format!("wells[{i}]: unknown kind `{other}` (injector, producer)"));
                    continue;
                }
            };
            if !(w.rate > 0.0 && w.rate.is_finite()) {
                errors.push(format!("wells[{i}]: rate must be > 0, got {}", w.rate));
            }
            wells.push(Well {
                location: Point2::new(w.x, w.y),
                rate: w.rate,
                kind,
            });
        }
        let total = |kind| wells.iter().filter(|w| w.kind == kind).map(|w| w.rate).sum::<f64>();
        let (inj, prod) = (total(WellKind::Injection), total(WellKind::Production));
        if (inj - prod).abs() > 1e-12 * inj.max(prod) {
            errors.push(format!("injection ({inj}) and production ({prod}) rates must balance"));
        }

        let snapshot_times = self.output.clone().unwrap_or_default().snapshot_times;
        for t in &snapshot_times {
            if !(t.is_finite() && *t >= 0.0 && (!t_final.is_finite() || *t <= t_final * (1.0 + 1e-12))) {
                errors.push(format!("snapshot time {t} lies outside [0, t_final]"));
            }
        }

        if !errors.is_empty() {
            return Err(Error::Config { errors });
        }
        Ok(RunConfig {
            mesh: mesh.expect("checked above"),
            k,
            dt,
            t_final,
            stepper,
            injected,
            check_invariants: self.check_invariants.unwrap_or(false),
            viscosity,
            d_m,
            d_l,
            d_t,
            porosity,
            permeability,
            regions: perm.regions,
            c0,
            wells,
            snapshot_times,
        })
    }
}

impl RunConfig {
    /// Per-cell coefficients on `mesh`.
    pub fn simulation_config(&self, mesh: &Mesh) -> SimulationConfig {
        let permeability = mesh
            .cells()
            .iter()
            .map(|cell| {
                let v = self
                    .regions
                    .iter()
                    .rev()
                    .find(|r| bbox_of(r.bbox).contains(&cell.centroid, 0.0))
                    .map_or(self.permeability, |r| r.value);
                v.tensor()
            })
            .collect();
        SimulationConfig {
            k: self.k,
            dt: self.dt,
            t_final: self.t_final,
            stepper: self.stepper,
            wells: self.wells.clone(),
            viscosity: self.viscosity,
            d_m: self.d_m,
            d_l: self.d_l,
            d_t: self.d_t,
            porosity: vec![self.porosity; mesh.n_cells()],
            permeability,
            injected: self.injected,
            snapshot_times: self.snapshot_times.clone(),
            check_invariants: self.check_invariants,
        }
    }
}

/// Reads and validates a config file.
pub fn read_config(path: &Path) -> Result<RunConfig> {
    let text = std::fs::read_to_string(path).map_err(io_error(path))?;
    config_from_str(
        &text,
        &path.display().to_string(),
        path.parent().unwrap_or(Path::new(".")),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
k = 0
dt = 1.0
t_final = 2.0
[mesh]
cartesian = [2, 2]
[physical]
mu0 = 1.0
mobility_ratio = 1.0
d_l = 1.0
d_t = 1.0
porosity = 0.1
[permeability]
default = 1.0
"#;

    fn errors(text: &str) -> Vec<String> {
        match config_from_str(text, "t", Path::new(".")) {
            Err(Error::Config { errors }) => errors,
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn minimal_config_uses_defaults() {
        let c = parse_config_file(MINIMAL, "t")
            .unwrap()
            .validate(Path::new("."))
            .unwrap();
        assert_eq!(c.stepper, Stepper::CrankNicolson);
        assert_eq!((c.d_m, c.c0, c.injected), (0.0, 0.0, 1.0));
        assert_eq!(
            c.mesh,
            MeshSource::Cartesian {
                nx: 2,
                ny: 2,
                bbox: BBox::new(0.0, 0.0, 1000.0, 1000.0)
            }
        );
    }

    #[test]
    fn unknown_keys_are_all_reported() {
        let e = errors(&format!("colour = 1\n{MINIMAL}[initial]\nc1 = 0.0\n[[wells]]\nkind = \"injector\"\nx = 0.0\ny = 0.0\nrate = 0.0\ndepth = 2\n"));
        assert_eq!(
            e,
            [
                "unknown key `colour`",
                "unknown key `initial.c1`",
                "unknown key `wells[0].depth`",
                "wells[0]: rate must be > 0, got 0",
            ]
        );
    }

    #[test]
    fn validation_collects_every_error() {
        let text = MINIMAL
            .replace("k = 0\n", "")
            .replace("dt = 1.0", "dt = 0.7")
            .replace("d_t = 1.0", "d_t = -1.0");
        let e = errors(&text);
        assert_eq!(e.len(), 3, "{e:?}");
        assert!(e.iter().any(|m| m == "missing `k`"));
        assert!(e.iter().any(|m| m.contains("does not divide")));
        assert!(e.iter().any(|m| m.contains("physical.d_t")));
    }

    #[test]
    fn syntax_errors_have_lines() {
        match parse_config_file("k = 1\ndt = = 2\n", "t") {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn tensor_permeability_and_regions() {
        let text = format!(
            "{MINIMAL}[[permeability.regions]]\nbbox = [0.0, 0.0, 500.0, 500.0]\nvalue = [[2.0, 0.5], [0.5, 3.0]]\n"
        );
        let c = parse_config_file(&text, "t").unwrap().validate(Path::new(".")).unwrap();
        let mesh = c.mesh.build().unwrap();
        let sim = c.simulation_config(&mesh);
        assert_eq!(sim.permeability[0], Tensor2::new(2.0, 0.5, 0.5, 3.0));
        assert_eq!(sim.permeability[3], Tensor2::identity());
        let bad = format!(
            "{MINIMAL}[[permeability.regions]]\nbbox = [0.0, 0.0, 1.0, 1.0]\nvalue = [[1.0, 2.0], [2.0, 1.0]]\n"
        );
        assert!(errors(&bad)[0].contains("positive definite"));
    }
}
