//! Feeder files, case selection and result export.
//!
//! Feeder files are JSON. Impedances carry a unit tag (`ohm` or `pu`),
//! capability records carry a power unit (`pu` or `mw`), voltage limits are
//! magnitudes in pu and are squared on ingestion. Squared-current limits are
//! always pu.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::capability::{gamma_from_pf, CapabilityError, CapabilitySpec, NodeCapability, ReactiveCase};
use crate::network::{BranchData, FeederNetwork, NetworkData, NetworkError, NodeLimits};
use crate::region::{OperatingRegion, RegionComparison};
use crate::validate::MonteCarloReport;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum IoError {
    #[error("parse error at line {line}: {reason}")]
    Parse { line: usize, reason: String },
    #[error("unsupported schema version {0} (expected {SCHEMA_VERSION})")]
    UnsupportedVersion(u32),
    #[error(transparent)]
    Network(#[from] NetworkError),
    #[error(transparent)]
    Capability(#[from] CapabilityError),
    #[error("capability record references unknown node {0}")]
    UnknownCapabilityNode(usize),
    #[error("duplicate capability record for node {0}")]
    DuplicateCapability(usize),
    #[error("node {node}: case `{case}` needs parameter `{param}`")]
    MissingParameter { node: usize, case: &'static str, param: &'static str },
    #[error("{path}: {source}")]
    File {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("region file: {0}")]
    Region(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ImpedanceUnit {
    Ohm,
    Pu,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PowerUnit {
    #[default]
    Pu,
    Mw,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CaseTag {
    UnityPf,
    ConstantPf,
    Box,
    Quadratic,
}

impl CaseTag {
    pub fn as_str(self) -> &'static str {
        match self {
            CaseTag::UnityPf => "unity-pf",
            CaseTag::ConstantPf => "constant-pf",
            CaseTag::Box => "box",
            CaseTag::Quadratic => "quadratic",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubstationRecord {
    pub id: usize,
    /// Voltage magnitude, pu.
    pub voltage: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeRecord {
    pub id: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    pub v_min: f64,
    pub v_max: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BranchRecord {
    pub from: usize,
    pub to: usize,
    pub r: f64,
    pub x: f64,
    pub unit: ImpedanceUnit,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub l_min: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub l_max: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CapabilityRecord {
    pub node: usize,
    pub case: CaseTag,
    #[serde(default)]
    pub unit: PowerUnit,
    pub p_min: f64,
    pub p_max: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pf: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub q_min: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub q_max: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub s_max: Option<f64>,
    #[serde(default)]
    pub demand: f64,
    #[serde(default)]
    pub solar: f64,
}

/// On-disk feeder description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeederFile {
    pub version: u32,
    pub name: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub notes: Vec<String>,
    pub base_kv: f64,
    pub base_mva: f64,
    pub substation: SubstationRecord,
    pub nodes: Vec<NodeRecord>,
    pub branches: Vec<BranchRecord>,
    #[serde(default)]
    pub capability: Vec<CapabilityRecord>,
}

/// Parsed feeder in per-unit, capability records still addressable by case.
#[derive(Debug, Clone, PartialEq)]
pub struct Feeder {
    pub name: String,
    pub network: FeederNetwork,
    /// Capability records converted to pu, one per internal position (`None` = no resource).
    pub records: Vec<Option<CapabilityRecord>>,
}

impl Feeder {
    pub fn from_file(file: &FeederFile) -> Result<Self, IoError> {
        if file.version != SCHEMA_VERSION {
            return Err(IoError::UnsupportedVersion(file.version));
        }
        let z_base = file.base_kv * file.base_kv / file.base_mva;
        let data = NetworkData {
            substation: file.substation.id,
            v0: file.substation.voltage * file.substation.voltage,
            base_kv: file.base_kv,
            base_mva: file.base_mva,
            nodes: file
                .nodes
                .iter()
                .map(|n| NodeLimits { id: n.id, v_min: n.v_min * n.v_min, v_max: n.v_max * n.v_max })
                .collect(),
            branches: file
                .branches
                .iter()
                .map(|b| {
                    let scale = match b.unit {
                        ImpedanceUnit::Ohm => 1.0 / z_base,
                        ImpedanceUnit::Pu => 1.0,
                    };
                    BranchData {
                        from: b.from,
                        to: b.to,
                        r: b.r * scale,
                        x: b.x * scale,
                        l_min: b.l_min.unwrap_or(0.0),
                        l_max: b.l_max.unwrap_or(f64::INFINITY),
                    }
                })
                .collect(),
        };
        let network = FeederNetwork::new(&data)?;

        let mut records = vec![None; network.len()];
        for rec in &file.capability {
            let pos = network.position_of(rec.node).ok_or(IoError::UnknownCapabilityNode(rec.node))?;
            if records[pos].is_some() {
                return Err(IoError::DuplicateCapability(rec.node));
            }
            let s = match rec.unit {
                PowerUnit::Pu => 1.0,
                PowerUnit::Mw => 1.0 / file.base_mva,
            };
            let scaled = |v: Option<f64>| v.map(|v| v * s);
            records[pos] = Some(CapabilityRecord {
                unit: PowerUnit::Pu,
                p_min: rec.p_min * s,
                p_max: rec.p_max * s,
                q_min: scaled(rec.q_min),
                q_max: scaled(rec.q_max),
                s_max: scaled(rec.s_max),
                demand: rec.demand * s,
                solar: rec.solar * s,
                ..rec.clone()
            });
        }
        let feeder = Feeder { name: file.name.clone(), network, records };
        feeder.capability(None, None)?;
        Ok(feeder)
    }

    /// Capability in internal order. `case` overrides every record's own tag;
    /// `pf` overrides the power factor used by the constant-pf case.
    pub fn capability(&self, case: Option<CaseTag>, pf: Option<f64>) -> Result<CapabilitySpec, IoError> {
        let nodes = self
            .records
            .iter()
            .map(|rec| {
                let Some(rec) = rec else { return Ok(NodeCapability::idle()) };
                let tag = case.unwrap_or(rec.case);
                let need = |v: Option<f64>, param| {
                    v.ok_or(IoError::MissingParameter { node: rec.node, case: tag.as_str(), param })
                };
                let reactive = match tag {
                    CaseTag::UnityPf => ReactiveCase::unity(),
                    CaseTag::ConstantPf => ReactiveCase::ConstantPf { gamma: gamma_from_pf(pf.or(rec.pf).unwrap_or(1.0))? },
                    CaseTag::Box => ReactiveCase::Box { q_min: need(rec.q_min, "q_min")?, q_max: need(rec.q_max, "q_max")? },
                    CaseTag::Quadratic => ReactiveCase::Quadratic { s_max: need(rec.s_max, "s_max")? },
                };
                Ok(NodeCapability { case: reactive, p_min: rec.p_min, p_max: rec.p_max, demand: rec.demand, solar: rec.solar })
            })
            .collect::<Result<Vec<_>, IoError>>()?;
        Ok(CapabilitySpec::new(nodes)?)
    }

    /// Serialise back to a file in per-unit, internal node order.
    pub fn to_file(&self) -> FeederFile {
        let data = self.network.to_data();
        let finite = |v: f64| v.is_finite().then_some(v);
        FeederFile {
            version: SCHEMA_VERSION,
            name: self.name.clone(),
            notes: Vec::new(),
            base_kv: data.base_kv,
            base_mva: data.base_mva,
            substation: SubstationRecord { id: data.substation, voltage: data.v0.sqrt() },
            nodes: data
                .nodes
                .iter()
                .map(|n| NodeRecord { id: n.id, name: None, v_min: n.v_min.sqrt(), v_max: n.v_max.sqrt() })
                .collect(),
            branches: data
                .branches
                .iter()
                .map(|b| BranchRecord {
                    from: b.from,
                    to: b.to,
                    r: b.r,
                    x: b.x,
                    unit: ImpedanceUnit::Pu,
                    l_min: Some(b.l_min).filter(|&l| l != 0.0),
                    l_max: finite(b.l_max),
                })
                .collect(),
            capability: self.records.iter().flatten().cloned().collect(),
        }
    }
}

fn parse_error(e: serde_json::Error) -> IoError {
    IoError::Parse { line: e.line(), reason: e.to_string() }
}

pub fn parse_feeder_str(text: &str) -> Result<Feeder, IoError> {
    let file: FeederFile = serde_json::from_str(text).map_err(parse_error)?;
    Feeder::from_file(&file)
}

/// Read and validate a feeder file.
pub fn parse_feeder(path: &Path) -> Result<Feeder, IoError> {
    let text = fs::read_to_string(path).map_err(|source| IoError::File { path: path.to_path_buf(), source })?;
    parse_feeder_str(&text)
}

/// One row of the region table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionRow {
    pub node: usize,
    pub p_lindist_minus: f64,
    pub p_lindist_plus: f64,
    pub p_c_minus: f64,
    pub p_c_plus: f64,
    pub delta_p_c: f64,
    pub flex_minus: f64,
    pub flex_plus: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionExport {
    /// One row per node, sorted by external id.
    pub rows: Vec<RegionRow>,
    pub summary: serde_json::Value,
}

pub const REGION_HEADER: &str = "node,p_lindist_minus,p_lindist_plus,p_c_minus,p_c_plus,delta_p_c,flex_minus,flex_plus";

impl RegionExport {
    pub fn new(network: &FeederNetwork, cmp: &RegionComparison, summary: serde_json::Value) -> Self {
        let mut rows: Vec<RegionRow> = (0..network.len())
            .map(|i| RegionRow {
                node: network.node_ids()[i],
                p_lindist_minus: cmp.lindist.p_minus[i],
                p_lindist_plus: cmp.lindist.p_plus[i],
                p_c_minus: cmp.inner.p_minus[i],
                p_c_plus: cmp.inner.p_plus[i],
                delta_p_c: cmp.inner.delta_p[i],
                flex_minus: cmp.inner.flex_minus[i],
                flex_plus: cmp.inner.flex_plus[i],
            })
            .collect();
        rows.sort_by_key(|r| r.node);
        RegionExport { rows, summary }
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from(REGION_HEADER);
        out.push('\n');
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{:.9},{:.9},{:.9},{:.9},{:.9},{:.9},{:.9}",
                r.node, r.p_lindist_minus, r.p_lindist_plus, r.p_c_minus, r.p_c_plus, r.delta_p_c, r.flex_minus, r.flex_plus
            );
        }
        out
    }
}

/// Full solved regions, enough to re-run validation later.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionFile {
    pub feeder: String,
    pub case: String,
    pub node_ids: Vec<usize>,
    pub inner: OperatingRegion,
    pub lindist: OperatingRegion,
}

impl RegionFile {
    pub fn read(path: &Path) -> Result<Self, IoError> {
        let text = fs::read_to_string(path).map_err(|source| IoError::File { path: path.to_path_buf(), source })?;
        serde_json::from_str(&text).map_err(parse_error)
    }

    /// Check the region matches the network's node order.
    pub fn check_against(&self, network: &FeederNetwork) -> Result<(), IoError> {
        if self.node_ids != network.node_ids() {
            return Err(IoError::Region(format!(
                "node order {:?} does not match feeder order {:?}",
                self.node_ids,
                network.node_ids()
            )));
        }
        Ok(())
    }
}

/// Per-sample voltage magnitudes, one column per node, for distribution plots.
pub fn samples_csv(report: &MonteCarloReport) -> String {
    let mut out = String::from("sample,diverged,violated");
    for id in &report.node_ids {
        let _ = write!(out, ",v_{id}");
    }
    out.push('\n');
    for (k, s) in report.samples.iter().enumerate() {
        let _ = write!(out, "{},{},{}", k, s.v.is_none() as u8, s.violated as u8);
        match &s.v {
            Some(v) => {
                for vi in v {
                    let _ = write!(out, ",{:.8}", vi.sqrt());
                }
            }
            None => {
                for _ in &report.node_ids {
                    out.push_str(",nan");
                }
            }
        }
        out.push('\n');
    }
    out
}

/// Write `region.csv`, `summary.json`, `regions.json` and one
/// `mc_voltages_<label>.csv` per Monte-Carlo report into `dir`.
pub fn export_results(
    export: &RegionExport,
    regions: &RegionFile,
    reports: &[(&str, &MonteCarloReport)],
    dir: &Path,
) -> Result<Vec<PathBuf>, IoError> {
    let io = |path: &Path| {
        let path = path.to_path_buf();
        move |source| IoError::File { path, source }
    };
    fs::create_dir_all(dir).map_err(io(dir))?;
    let mut written = Vec::new();
    let mut put = |name: &str, body: String| -> Result<(), IoError> {
        let path = dir.join(name);
        fs::write(&path, body).map_err(io(&path))?;
        written.push(path);
        Ok(())
    };
    put("region.csv", export.to_csv())?;
    put("summary.json", serde_json::to_string_pretty(&export.summary).expect("summary serialises") + "\n")?;
    put("regions.json", serde_json::to_string_pretty(regions).expect("regions serialise") + "\n")?;
    for (label, report) in reports {
        put(&format!("mc_voltages_{label}.csv"), samples_csv(report))?;
    }
    Ok(written)
}
