#![allow(dead_code)]

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use loadlens::features::FeatureMatrix;
use loadlens::time::{HourlyAxis, Timestamp};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn matrix(columns: Vec<Vec<f64>>, target: Vec<f64>) -> FeatureMatrix {
    let n = target.len();
    let names = (0..columns.len()).map(|j| format!("x{j}")).collect();
    FeatureMatrix {
        axis: HourlyAxis::new(Timestamp::from_unix(1_672_531_200), n),
        names,
        columns,
        target,
        warmup: 0,
        thresholds: Default::default(),
    }
}

/// Options for the small summer dataset used by the pipeline tests.
pub struct Small {
    pub family: &'static str,
    /// Hours of the load file to blank out, as indices into the axis.
    pub load_gaps: Vec<usize>,
    /// Extra TOML appended verbatim to the config.
    pub extra: String,
    pub candidates: Option<Vec<&'static str>>,
}

impl Default for Small {
    fn default() -> Self {
        Small { family: "linear", load_gaps: Vec::new(), extra: String::new(), candidates: None }
    }
}

pub const SMALL_HOURS: usize = 92 * 24;

/// June to August 2023 of synthetic hourly load and one city's weather.
/// `prcp` and `snow` are identically zero.
pub fn write_small(dir: &Path, opts: &Small) -> PathBuf {
    let start = Timestamp::from_central(2023, 6, 1, 0).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let mut load = String::from("timestamp,load\n");
    let mut weather = String::from("timestamp,tavg,tmin,tmax,prcp,snow\n");
    let mut drift = 0.0;
    for h in 0..SMALL_HOURS {
        let at = start.add_hours(h as i64);
        let hour = at.local().hour as f64;
        drift = 0.95 * drift + rng.gen_range(-1.0..1.0);
        let tavg = 82.0 + 9.0 * ((hour - 9.0) / 24.0 * std::f64::consts::TAU).sin() + drift;
        let heat = if (1700..1800).contains(&h) { 12.0 } else { 0.0 };
        let t = tavg + heat;
        let demand = 900.0 + 25.0 * (t - 65.0).max(0.0) + 40.0 * (hour / 24.0 * std::f64::consts::PI).sin()
            + rng.gen_range(-5.0..5.0);
        let _ = writeln!(weather, "{at},{t:.3},{:.3},{:.3},0,0", t - 8.0, t + 8.0);
        if opts.load_gaps.contains(&h) {
            let _ = writeln!(load, "{at},");
        } else {
            let _ = writeln!(load, "{at},{demand:.3}");
        }
    }
    std::fs::write(dir.join("load.csv"), load).unwrap();
    std::fs::write(dir.join("weather_a.csv"), weather).unwrap();
    let candidates = match &opts.candidates {
        Some(c) => format!(
            "candidates = [{}]\n",
            c.iter().map(|s| format!("\"{s}\"")).collect::<Vec<_>>().join(", ")
        ),
        None => String::new(),
    };
    let config = format!(
        r#"seed = 1

[data.load]
path = "load.csv"

[[data.cities]]
name = "A"
path = "weather_a.csv"
weight = 1.0

[split]
train_end = "2023-07-31T23:00:00-05:00"
test_start = "2023-08-01T00:00:00-05:00"
test_end = "2023-08-31T23:00:00-05:00"

[[split.peak_windows]]
name = "mid-aug"
start = "2023-08-10T00:00:00-05:00"
end = "2023-08-20T23:00:00-05:00"

[model]
family = "{family}"

[model.gbdt]
rounds = 40
max_depth = 4

[model.lstm]
hidden = 4
window = 12
epochs = 1

[explain]
background = 24
max_rows = 60

[refine]
{candidates}
[[features.baseline]]
name = "hour"
kind = "calendar"
field = "hour"

[[features.baseline]]
name = "tavg"
kind = "weather"
column = "tavg"

[[features.baseline]]
name = "tmax"
kind = "weather"
column = "tmax"

[[features.baseline]]
name = "prcp"
kind = "weather"
column = "prcp"

[[features.refined]]
name = "CDD"
kind = "degree_day"
side = "cooling"

[[features.refined]]
name = "CDD_x_hour"
kind = "interaction"
left = "CDD"
right = "hour"

[[features.refined]]
name = "prcp_x_hour"
kind = "interaction"
left = "prcp"
right = "hour"
{extra}"#,
        family = opts.family,
        extra = opts.extra,
    );
    let path = dir.join("config.toml");
    std::fs::write(&path, config).unwrap();
    path
}
