//! CSV export of observation sets with a JSON metadata sidecar.
//!
//! The CSV header is `c_0..c_{dC-1},z_0..z_{dZ-1},a_0..a_{dA-1},r`. Values are
//! written in Rust's shortest round-trip decimal form.

use std::io::{Read, Write};
use std::path::Path;

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use super::observation::{ObservationSet, Scaling, TruthModel};
use crate::error::{Error, Result};

pub const METADATA_FORMAT: &str = "dmliv-observations";
const METADATA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetMetadata {
    pub format: String,
    pub version: u32,
    pub seed: Option<u64>,
    /// Generator configuration as written by the caller.
    pub config: serde_json::Value,
    pub scaling: Option<Scaling>,
    pub truth: Option<TruthModel>,
    pub n_rows: usize,
    pub context_dim: usize,
    pub instrument_dim: usize,
    pub action_dim: usize,
}

impl DatasetMetadata {
    pub fn describe(obs: &ObservationSet, seed: Option<u64>, config: serde_json::Value) -> Self {
        let (dc, dz, da) = obs.dims();
        Self {
            format: METADATA_FORMAT.to_string(),
            version: METADATA_VERSION,
            seed,
            config,
            scaling: obs.scaling().cloned(),
            truth: obs.truth().cloned(),
            n_rows: obs.len(),
            context_dim: dc,
            instrument_dim: dz,
            action_dim: da,
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let meta: DatasetMetadata = serde_json::from_str(text)?;
        if meta.format != METADATA_FORMAT {
            return Err(Error::Format(format!("expected format {METADATA_FORMAT:?}, got {:?}", meta.format)));
        }
        if meta.version != METADATA_VERSION {
            return Err(Error::Format(format!("unsupported metadata version {}", meta.version)));
        }
        if meta.action_dim == 0 || meta.instrument_dim == 0 {
            return Err(Error::Format("action and instrument dimensions must be positive".into()));
        }
        if let Some(s) = &meta.scaling {
            if s.action.len() != meta.action_dim
                || !s.action.iter().chain(std::iter::once(&s.outcome)).all(|a| a.std > 0.0 && a.mean.is_finite())
            {
                return Err(Error::Format("scaling must have one positive-std entry per action column".into()));
            }
        }
        if let Some(truth) = &meta.truth {
            let ok = match truth {
                TruthModel::Demand { rho, iv_strength } => {
                    meta.context_dim == 2 && (0.0..=1.0).contains(rho) && iv_strength.is_finite()
                }
                TruthModel::SemiSynth { weights, k_levels } => {
                    weights.len() == meta.context_dim
                        && meta.context_dim >= 3
                        && *k_levels >= 1
                        && weights.iter().all(|row| row.len() == *k_levels)
                }
            };
            if !ok {
                return Err(Error::Format("truth model does not match the declared dimensions".into()));
            }
        }
        Ok(meta)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

pub fn csv_header(dc: usize, dz: usize, da: usize) -> Vec<String> {
    (0..dc)
        .map(|i| format!("c_{i}"))
        .chain((0..dz).map(|i| format!("z_{i}")))
        .chain((0..da).map(|i| format!("a_{i}")))
        .chain(std::iter::once("r".to_string()))
        .collect()
}

impl ObservationSet {
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let (dc, dz, da) = self.dims();
        let mut w = csv::Writer::from_writer(out);
        w.write_record(csv_header(dc, dz, da))?;
        let mut rec: Vec<String> = Vec::with_capacity(dc + dz + da + 1);
        for i in 0..self.len() {
            rec.clear();
            rec.extend(self.context().row(i).iter().map(|x| x.to_string()));
            rec.extend(self.instrument().row(i).iter().map(|x| x.to_string()));
            rec.extend(self.action().row(i).iter().map(|x| x.to_string()));
            rec.push(self.outcome()[i].to_string());
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }

    /// Parse the CSV layout written by [`ObservationSet::write_csv`]. Column
    /// groups are recovered from the header prefixes; metadata, when given,
    /// attaches truth and scaling and is checked against the parsed shape.
    pub fn from_csv_reader<R: Read>(input: R, meta: Option<&DatasetMetadata>) -> Result<ObservationSet> {
        let mut rdr = csv::Reader::from_reader(input);
        let header = rdr.headers()?.clone();
        let mut groups = [0usize; 3];
        let mut stage = 0;
        for (pos, name) in header.iter().enumerate() {
            let last = pos + 1 == header.len();
            let (group, idx) = match name {
                "r" if last => break,
                _ => {
                    let (prefix, num) =
                        name.split_once('_').ok_or_else(|| Error::Format(format!("unexpected column {name:?}")))?;
                    let g = match prefix {
                        "c" => 0,
                        "z" => 1,
                        "a" => 2,
                        _ => return Err(Error::Format(format!("unexpected column {name:?}"))),
                    };
                    let idx: usize = num.parse().map_err(|_| Error::Format(format!("bad column index in {name:?}")))?;
                    (g, idx)
                }
            };
            if group < stage || idx != groups[group] {
                return Err(Error::Format(format!("column {name:?} out of order")));
            }
            stage = group;
            groups[group] += 1;
        }
        if header.iter().next_back() != Some("r") {
            return Err(Error::Format("last column must be r".into()));
        }
        let [dc, dz, da] = groups;
        let width = dc + dz + da + 1;

        let mut values: Vec<f64> = Vec::new();
        let mut rows = 0usize;
        for rec in rdr.records() {
            let rec = rec?;
            if rec.len() != width {
                return Err(Error::Format(format!("row {rows} has {} fields, expected {width}", rec.len())));
            }
            for field in rec.iter() {
                let v: f64 =
                    field.trim().parse().map_err(|_| Error::Format(format!("row {rows}: cannot parse {field:?}")))?;
                values.push(v);
            }
            rows += 1;
        }
        let table = Array2::from_shape_vec((rows, width), values).map_err(|e| Error::Format(e.to_string()))?;
        let context = table.slice(ndarray::s![.., 0..dc]).to_owned();
        let instrument = table.slice(ndarray::s![.., dc..dc + dz]).to_owned();
        let action = table.slice(ndarray::s![.., dc + dz..dc + dz + da]).to_owned();
        let outcome: Array1<f64> = table.column(width - 1).to_owned();
        let mut obs = ObservationSet::new(context, instrument, action, outcome)?;
        if let Some(meta) = meta {
            if (meta.context_dim, meta.instrument_dim, meta.action_dim, meta.n_rows) != (dc, dz, da, rows) {
                return Err(Error::Format("metadata does not match the CSV shape".into()));
            }
            if let Some(t) = &meta.truth {
                obs = obs.with_truth(t.clone());
            }
            if let Some(s) = &meta.scaling {
                obs = obs.with_scaling(s.clone());
            }
        }
        Ok(obs)
    }
}

/// Write `<stem>.csv` and `<stem>.json` side by side.
pub fn write_observations(
    obs: &ObservationSet,
    csv_path: &Path,
    seed: Option<u64>,
    config: serde_json::Value,
) -> Result<DatasetMetadata> {
    let meta = DatasetMetadata::describe(obs, seed, config);
    obs.write_csv(std::fs::File::create(csv_path)?)?;
    std::fs::write(csv_path.with_extension("json"), meta.to_json()?)?;
    Ok(meta)
}

/// Read a CSV and, when present, its `.json` sidecar.
pub fn read_observations(csv_path: &Path) -> Result<ObservationSet> {
    let meta_path = csv_path.with_extension("json");
    let meta =
        if meta_path.exists() { Some(DatasetMetadata::from_json(&std::fs::read_to_string(meta_path)?)?) } else { None };
    ObservationSet::from_csv_reader(std::fs::File::open(csv_path)?, meta.as_ref())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::{generate_demand, generate_semisynth, DemandConfig, SemiSynthConfig};

    #[test]
    fn header_layout() {
        assert_eq!(csv_header(2, 1, 1), ["c_0", "c_1", "z_0", "a_0", "r"]);
    }

    #[test]
    fn csv_round_trip_with_sidecar() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("demand.csv");
        let cfg = DemandConfig { n_samples: 300, seed: 11, ..Default::default() };
        let obs = generate_demand(&cfg).unwrap();
        write_observations(&obs, &path, Some(11), serde_json::to_value(&cfg).unwrap()).unwrap();
        let back = read_observations(&path).unwrap();
        assert_eq!(back.truth(), obs.truth());
        assert_eq!(back.scaling(), obs.scaling());
        let max_diff = obs
            .context()
            .iter()
            .zip(back.context())
            .chain(obs.action().iter().zip(back.action()))
            .chain(obs.outcome().iter().zip(back.outcome()))
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(max_diff <= 1e-12);
    }

    #[test]
    fn semisynth_round_trip_keeps_weights() {
        let obs = generate_semisynth(&SemiSynthConfig { n_samples: 50, ..Default::default() }).unwrap();
        let mut buf = Vec::new();
        obs.write_csv(&mut buf).unwrap();
        let meta = DatasetMetadata::describe(&obs, Some(0), serde_json::Value::Null);
        let meta = DatasetMetadata::from_json(&meta.to_json().unwrap()).unwrap();
        let back = ObservationSet::from_csv_reader(buf.as_slice(), Some(&meta)).unwrap();
        assert_eq!(back.truth(), obs.truth());
        assert_eq!(back.dims(), (6, 1, 1));
    }

    #[test]
    fn malformed_inputs_are_errors() {
        for text in [
            "c_0,z_0,a_0\n1,2,3\n",
            "c_0,a_0,z_0,r\n1,2,3,4\n",
            "c_0,z_0,a_0,r\n1,2,3\n",
            "c_0,z_0,a_0,r\n1,x,3,4\n",
            "c_1,z_0,a_0,r\n1,2,3,4\n",
            "",
        ] {
            assert!(ObservationSet::from_csv_reader(text.as_bytes(), None).is_err(), "{text:?}");
        }
        assert!(DatasetMetadata::from_json("{}").is_err());
    }
}
