//! Experiment description and its key-value config format.

use std::path::Path;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Highest DAC resolution accepted; δ is indistinguishable from 1 beyond it.
pub const MAX_BITS: u32 = 12;

/// Full experiment description.
///
/// SNR points are in dB; everything downstream of [`SystemScenario::snr_linear`]
/// is linear. The noise power at one SNR point is `total_power / snr`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SystemScenario {
    pub n_tx: usize,
    pub n_rx_per_user: Vec<usize>,
    pub snr_db_grid: Vec<f64>,
    pub total_power: f64,
    pub bits: Vec<u32>,
    /// Complex transmit correlation coefficient, serialized as `[re, im]`.
    #[serde(with = "complex_pair")]
    pub corr_coeff: Complex64,
    pub csi_error_var: f64,
    pub trials: usize,
    pub seed: u64,
}

impl SystemScenario {
    pub fn users(&self) -> usize {
        self.n_rx_per_user.len()
    }

    pub fn n_rx_total(&self) -> usize {
        self.n_rx_per_user.iter().sum()
    }

    pub fn snr_linear(snr_db: f64) -> f64 {
        10f64.powf(snr_db / 10.0)
    }

    pub fn noise_power(&self, snr_db: f64) -> f64 {
        self.total_power / Self::snr_linear(snr_db)
    }

    pub fn has_impairment(&self) -> bool {
        self.corr_coeff != Complex64::new(0.0, 0.0) || self.csi_error_var > 0.0
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.n_tx == 0 {
            return bad("n_tx must be at least 1".into());
        }
        if self.n_rx_per_user.is_empty() {
            return bad("at least one user is required".into());
        }
        if let Some(j) = self.n_rx_per_user.iter().position(|&n| n == 0) {
            return bad(format!("user {j} has zero receive antennas"));
        }
        let nu = self.n_rx_total();
        if self.n_tx < nu {
            return bad(format!(
                "n_tx = {} is smaller than the total receive antennas N_u = {nu}",
                self.n_tx
            ));
        }
        if self.snr_db_grid.is_empty() || self.snr_db_grid.iter().any(|s| !s.is_finite()) {
            return bad("snr_db_grid must be a nonempty list of finite values".into());
        }
        if !(self.total_power > 0.0 && self.total_power.is_finite()) {
            return bad(format!("total_power must be positive, got {}", self.total_power));
        }
        if self.bits.is_empty() {
            return bad("bits must list at least one DAC resolution".into());
        }
        if let Some(b) = self.bits.iter().find(|&&b| b == 0 || b > MAX_BITS) {
            return bad(format!("bits = {b} outside 1..={MAX_BITS}"));
        }
        if !(self.corr_coeff.norm() <= 1.0) {
            return bad(format!("|corr_coeff| = {} exceeds 1", self.corr_coeff.norm()));
        }
        if !(self.csi_error_var >= 0.0 && self.csi_error_var.is_finite()) {
            return bad(format!("csi_error_var must be >= 0, got {}", self.csi_error_var));
        }
        if self.trials == 0 {
            return bad("trials must be at least 1".into());
        }
        Ok(())
    }

    /// Row ranges of each user's block in the combined channel.
    pub fn user_offsets(&self) -> Vec<std::ops::Range<usize>> {
        let mut start = 0;
        self.n_rx_per_user
            .iter()
            .map(|&n| {
                let r = start..start + n;
                start += n;
                r
            })
            .collect()
    }

    /// Hex SHA-256 of the canonical JSON form.
    pub fn digest(&self) -> String {
        let json = serde_json::to_vec(self).expect("scenario serializes");
        let mut h = Sha256::new();
        h.update(&json);
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn to_table(&self) -> toml::Table {
        let mut t = toml::Table::new();
        t.insert("n_tx".into(), (self.n_tx as i64).into());
        t.insert("users".into(), (self.users() as i64).into());
        t.insert(
            "n_rx_per_user".into(),
            toml::Value::Array(self.n_rx_per_user.iter().map(|&n| (n as i64).into()).collect()),
        );
        t.insert(
            "snr_db_grid".into(),
            toml::Value::Array(self.snr_db_grid.iter().map(|&s| s.into()).collect()),
        );
        t.insert("total_power".into(), self.total_power.into());
        t.insert(
            "bits".into(),
            toml::Value::Array(self.bits.iter().map(|&b| (b as i64).into()).collect()),
        );
        t.insert(
            "corr_coeff".into(),
            toml::Value::Array(vec![self.corr_coeff.re.into(), self.corr_coeff.im.into()]),
        );
        t.insert("csi_error_var".into(), self.csi_error_var.into());
        t.insert("trials".into(), (self.trials as i64).into());
        t.insert("seed".into(), (self.seed as i64).into());
        t
    }

    /// Resolve a scenario from a parsed config table.
    ///
    /// Recognized keys: `n_tx`, `users`, `n_rx_per_user` (integer or list),
    /// `snr_db_grid`, `total_power`, `bits` (integer or list), `corr_coeff`
    /// (number or `[re, im]`), `csi_error_var`, `trials`, `seed`. Unknown keys
    /// are rejected.
    pub fn from_table(table: &toml::Table) -> Result<Self> {
        const KEYS: [&str; 10] = [
            "n_tx",
            "users",
            "n_rx_per_user",
            "snr_db_grid",
            "total_power",
            "bits",
            "corr_coeff",
            "csi_error_var",
            "trials",
            "seed",
        ];
        if let Some(k) = table.keys().find(|k| !KEYS.contains(&k.as_str())) {
            return Err(Error::Config(format!("unknown scenario key `{k}`")));
        }
        let n_tx = req_usize(table, "n_tx")?;
        let users = opt_usize(table, "users")?;
        let n_rx_per_user = match table.get("n_rx_per_user") {
            Some(toml::Value::Integer(n)) => {
                let users = users.ok_or_else(|| {
                    Error::Config("`users` is required when n_rx_per_user is a single value".into())
                })?;
                vec![to_usize("n_rx_per_user", *n)?; users]
            }
            Some(toml::Value::Array(a)) => {
                let list = a
                    .iter()
                    .map(|v| match v {
                        toml::Value::Integer(n) => to_usize("n_rx_per_user", *n),
                        _ => Err(Error::Config("n_rx_per_user entries must be integers".into())),
                    })
                    .collect::<Result<Vec<_>>>()?;
                if let Some(u) = users {
                    if u != list.len() {
                        return Err(Error::Config(format!(
                            "users = {u} but n_rx_per_user lists {} entries",
                            list.len()
                        )));
                    }
                }
                list
            }
            Some(_) => return Err(Error::Config("n_rx_per_user must be an integer or list".into())),
            None => return Err(Error::Config("missing key `n_rx_per_user`".into())),
        };
        let snr_db_grid = match table.get("snr_db_grid") {
            Some(toml::Value::Array(a)) => a
                .iter()
                .map(|v| number("snr_db_grid", v))
                .collect::<Result<Vec<_>>>()?,
            Some(v) => vec![number("snr_db_grid", v)?],
            None => default_snr_grid(),
        };
        let total_power = match table.get("total_power") {
            Some(v) => number("total_power", v)?,
            None => 1.0,
        };
        let bits = match table.get("bits") {
            Some(toml::Value::Integer(b)) => vec![to_u32("bits", *b)?],
            Some(toml::Value::Array(a)) => a
                .iter()
                .map(|v| match v {
                    toml::Value::Integer(b) => to_u32("bits", *b),
                    _ => Err(Error::Config("bits entries must be integers".into())),
                })
                .collect::<Result<Vec<_>>>()?,
            Some(_) => return Err(Error::Config("bits must be an integer or list".into())),
            None => return Err(Error::Config("missing key `bits`".into())),
        };
        let corr_coeff = match table.get("corr_coeff") {
            None => Complex64::new(0.0, 0.0),
            Some(toml::Value::Array(a)) if a.len() == 2 => {
                Complex64::new(number("corr_coeff", &a[0])?, number("corr_coeff", &a[1])?)
            }
            Some(v) => Complex64::new(number("corr_coeff", v)?, 0.0),
        };
        let csi_error_var = match table.get("csi_error_var") {
            Some(v) => number("csi_error_var", v)?,
            None => 0.0,
        };
        let trials = opt_usize(table, "trials")?.unwrap_or(200);
        let seed = match table.get("seed") {
            Some(toml::Value::Integer(s)) if *s >= 0 => *s as u64,
            Some(_) => return Err(Error::Config("seed must be a nonnegative integer".into())),
            None => 0,
        };
        let s = SystemScenario {
            n_tx,
            n_rx_per_user,
            snr_db_grid,
            total_power,
            bits,
            corr_coeff,
            csi_error_var,
            trials,
            seed,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let table: toml::Table = text
            .parse()
            .map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        Self::from_table(&table)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }
}

/// Default SNR grid: −5 to 30 dB in 5 dB steps.
pub fn default_snr_grid() -> Vec<f64> {
    (0..8).map(|i| -5.0 + 5.0 * i as f64).collect()
}

/// Apply `key=value` overrides (value in TOML syntax) to a config table.
pub fn apply_overrides(table: &mut toml::Table, overrides: &[String]) -> Result<()> {
    for o in overrides {
        let (key, value) = o
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("override `{o}` is not of the form key=value")))?;
        let key = key.trim();
        let doc = format!("v = {}", value.trim());
        let parsed: toml::Table = doc
            .parse()
            .or_else(|_| format!("v = \"{}\"", value.trim()).parse())
            .map_err(|e: toml::de::Error| Error::Config(format!("override `{o}`: {e}")))?;
        table.insert(key.to_string(), parsed["v"].clone());
    }
    Ok(())
}

fn number(key: &str, v: &toml::Value) -> Result<f64> {
    match v {
        toml::Value::Float(f) => Ok(*f),
        toml::Value::Integer(i) => Ok(*i as f64),
        _ => Err(Error::Config(format!("`{key}` must be numeric"))),
    }
}

fn to_usize(key: &str, n: i64) -> Result<usize> {
    usize::try_from(n).map_err(|_| Error::Config(format!("`{key}` must be nonnegative, got {n}")))
}

fn to_u32(key: &str, n: i64) -> Result<u32> {
    u32::try_from(n).map_err(|_| Error::Config(format!("`{key}` out of range: {n}")))
}

fn opt_usize(t: &toml::Table, key: &str) -> Result<Option<usize>> {
    match t.get(key) {
        None => Ok(None),
        Some(toml::Value::Integer(n)) => to_usize(key, *n).map(Some),
        Some(_) => Err(Error::Config(format!("`{key}` must be an integer"))),
    }
}

fn req_usize(t: &toml::Table, key: &str) -> Result<usize> {
    opt_usize(t, key)?.ok_or_else(|| Error::Config(format!("missing key `{key}`")))
}

mod complex_pair {
    use num_complex::Complex64;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(z: &Complex64, s: S) -> Result<S::Ok, S::Error> {
        [z.re, z.im].serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Complex64, D::Error> {
        let [re, im] = <[f64; 2]>::deserialize(d)?;
        Ok(Complex64::new(re, im))
    }
}
