//! TOML run files: presets, deep-merge of user overrides, optional sweep
//! section and the resolved echo.

use std::path::Path;

use serde::{Deserialize, Serialize};
use toml::{Table, Value};

use crate::error::{Error, Result};
use crate::experiment::{SimConfig, SweepAxis};

const DESK: &str = r#"
n_agents = 30
iterations = 5000
runs = 10
log_stride = 100
[model]
kernels = 2
features = 10
widths = [200.0, 1000.0]
[channel]
b = 4
snr_db = -20.0
gamma_scale = 0.01
[schedule]
zeta_scale = 2e-3
"#;

const FIG2: &str = r#"
schemes = ["OTA-CS", "OTA-C", "DBC", "ANB", "NOC", "CEN"]
n_agents = 100
iterations = 20000
runs = 100
log_stride = 100
[model]
kernels = 2
features = 25
widths = [200.0, 1000.0]
[channel]
b = 10
snr_db = -20.0
gamma_scale = 0.1
[schedule]
zeta_scale = 1e-7
"#;

const FIG3: &str = r#"
schemes = ["OTA-C", "DBC"]
log_stride = 20000
[sweep]
axis = "n-agents"
values = [50.0, 100.0, 150.0, 200.0, 250.0]
"#;

const FIG4: &str = r#"
schemes = ["OTA-C", "DBC", "ANB", "NOC"]
iterations = 10000
log_stride = 10000
[schedule]
family = "snr-sweep"
[sweep]
axis = "snr"
values = [-40.0, -30.0, -20.0, -10.0, 0.0, 10.0]
"#;

pub const PRESETS: [&str; 4] = ["desk", "fig2", "fig3", "fig4"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    pub axis: SweepAxis,
    pub values: Vec<f64>,
}

/// A parsed run file.
#[derive(Debug, Clone, PartialEq)]
pub struct RunFile {
    pub sim: SimConfig,
    pub sweep: Option<SweepSpec>,
}

#[derive(Serialize)]
struct Echo<'a> {
    #[serde(flatten)]
    sim: &'a SimConfig,
    #[serde(skip_serializing_if = "Option::is_none")]
    sweep: &'a Option<SweepSpec>,
}

fn parse_table(text: &str, origin: &str) -> Result<Table> {
    text.parse::<Table>()
        .map_err(|e| Error::config(format!("{origin}: {e}")))
}

/// Preset bundle as a TOML table.
pub fn preset(name: &str) -> Result<Table> {
    let mut base = parse_table(DESK, "desk preset")?;
    match name {
        "desk" => {}
        "fig2" => deep_merge(&mut base, parse_table(FIG2, "fig2 preset")?),
        "fig3" | "fig4" => {
            deep_merge(&mut base, parse_table(FIG2, "fig2 preset")?);
            let extra = if name == "fig3" { FIG3 } else { FIG4 };
            deep_merge(&mut base, parse_table(extra, "preset")?);
        }
        other => {
            return Err(Error::config(format!(
                "unknown preset {other:?}; expected one of {}",
                PRESETS.join(", ")
            )))
        }
    }
    Ok(base)
}

/// Recursively overlay `over` onto `base`; tables merge, other values replace.
pub fn deep_merge(base: &mut Table, over: Table) {
    for (k, v) in over {
        match (base.get_mut(&k), v) {
            (Some(Value::Table(b)), Value::Table(o)) => deep_merge(b, o),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

impl RunFile {
    pub fn parse(text: &str, origin: &str) -> Result<Self> {
        let mut user = parse_table(text, origin)?;
        let mut table = match user.remove("preset") {
            Some(Value::String(p)) => preset(&p)?,
            Some(other) => return Err(Error::config(format!("{origin}: preset must be a string, got {other}"))),
            None => Table::new(),
        };
        deep_merge(&mut table, user);
        let sweep = match table.remove("sweep") {
            Some(v) => Some(
                SweepSpec::deserialize(v).map_err(|e| Error::config(format!("{origin}: [sweep]: {e}")))?,
            ),
            None => None,
        };
        // re-render so field errors carry positions in the merged document
        let merged = toml::to_string(&table).map_err(|e| Error::config(format!("{origin}: {e}")))?;
        let sim: SimConfig = toml::from_str(&merged).map_err(|e| Error::config(format!("{origin}: {e}")))?;
        sim.validate()?;
        if let Some(s) = &sweep {
            if s.values.is_empty() {
                return Err(Error::config(format!("{origin}: [sweep] values must be nonempty")));
            }
        }
        Ok(Self { sim, sweep })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, &path.display().to_string())
    }

    /// Fully expanded configuration that re-parses to the same value.
    pub fn resolved_toml(&self) -> Result<String> {
        toml::to_string(&Echo {
            sim: &self.sim,
            sweep: &self.sweep,
        })
        .map_err(|e| Error::config(format!("cannot render configuration: {e}")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::experiment::Scheme;
    use std::path::PathBuf;

    #[test]
    fn presets_expand() {
        let r = RunFile::parse("preset = \"fig2\"", "t").unwrap();
        assert_eq!(r.sim.schemes.len(), 6);
        assert_eq!(r.sim.n_agents, 100);
        assert_eq!(r.sim.channel.b, 10);
        assert_eq!(r.sim.model.features, 25);
        let d = RunFile::parse("preset = \"desk\"\nn_agents = 12", "t").unwrap();
        assert_eq!(d.sim.n_agents, 12);
        assert_eq!(d.sim.model.features, 10);
        let f4 = RunFile::parse("preset = \"fig4\"", "t").unwrap();
        assert_eq!(f4.sweep.unwrap().axis, SweepAxis::Snr);
        assert!(RunFile::parse("preset = \"nope\"", "t").is_err());
    }

    #[test]
    fn merge_is_deep() {
        let r = RunFile::parse("preset = \"fig2\"\n[channel]\nsnr_db = 0.0", "t").unwrap();
        assert_eq!(r.sim.channel.snr_db, 0.0);
        assert_eq!(r.sim.channel.b, 10);
    }

    #[test]
    fn errors_name_the_field() {
        let e = RunFile::parse("n_agentz = 3", "cfg.toml").unwrap_err().to_string();
        assert!(e.contains("n_agentz") && e.contains("cfg.toml"), "{e}");
        let e = RunFile::parse("n_agents = \"x\"", "cfg.toml").unwrap_err().to_string();
        assert!(e.contains("n_agents"), "{e}");
        let e = RunFile::parse("[model]\nwidths = [1.0]", "cfg.toml").unwrap_err().to_string();
        assert!(e.contains("widths"), "{e}");
        let e = RunFile::parse("n_agents = ", "cfg.toml").unwrap_err().to_string();
        assert!(e.contains("line 1"), "{e}");
    }

    #[test]
    fn resolved_echo_round_trips() {
        for text in [
            "preset = \"fig3\"",
            "preset = \"desk\"\nschemes = [\"OTA-C\"]\n[dataset]\ncsv = \"data.csv\"",
            "",
        ] {
            let r = RunFile::parse(text, "t").unwrap();
            let echo = r.resolved_toml().unwrap();
            let again = RunFile::parse(&echo, "echo").unwrap();
            assert_eq!(again, r, "{echo}");
        }
        let r = RunFile::parse("[dataset]\ncsv = \"a.csv\"", "t").unwrap();
        assert_eq!(r.sim.dataset.csv, Some(PathBuf::from("a.csv")));
        assert_eq!(r.sim.schemes, Scheme::ALL.to_vec());
    }
}
