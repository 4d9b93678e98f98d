//! Seeded synthetic load and city weather for demos and tests.
//!
//! Three calendar years of hourly data for four cities. Temperature follows a
//! seasonal and diurnal cycle with persistent noise, summer heatwaves and
//! winter cold snaps. Load responds nonlinearly to temperature, carries a
//! slowly wandering level that only its own history reveals, and surges when
//! heat accumulates over several days.

use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use chrono::Datelike;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::features::calendar::HolidayCalendar;
use crate::time::{HourlyAxis, Timestamp};

/// Pipeline configuration matching the files written by [`write_fixture`].
pub const FIXTURE_CONFIG: &str = include_str!("../../../configs/fixture.toml");

#[derive(Debug, Clone, PartialEq)]
pub struct City {
    pub name: &'static str,
    pub file: &'static str,
    pub weight: f64,
    /// Mean temperature offset from the regional signal, °F.
    pub offset: f64,
}

pub const CITIES: [City; 4] = [
    City { name: "Austin", file: "weather_austin.csv", weight: 0.45, offset: 0.0 },
    City { name: "San Antonio", file: "weather_san_antonio.csv", weight: 0.40, offset: 1.0 },
    City { name: "Round Rock", file: "weather_round_rock.csv", weight: 0.10, offset: -0.8 },
    City { name: "San Marcos", file: "weather_san_marcos.csv", weight: 0.05, offset: 0.4 },
];

#[derive(Debug, Clone, PartialEq)]
pub struct FixtureOptions {
    pub seed: u64,
    pub start_year: i32,
    pub years: i32,
    /// Drop a few observations so ingestion has gaps to fill.
    pub inject_gaps: bool,
}

impl Default for FixtureOptions {
    fn default() -> Self {
        FixtureOptions { seed: 2024, start_year: 2022, years: 3, inject_gaps: true }
    }
}

/// Per-city hourly weather: `[tavg, tmin, tmax, prcp, snow]`.
#[derive(Debug, Clone)]
pub struct CitySeries {
    pub city: City,
    pub columns: [Vec<Option<f64>>; 5],
}

#[derive(Debug, Clone)]
pub struct Fixture {
    pub axis: HourlyAxis,
    pub load: Vec<Option<f64>>,
    pub cities: Vec<CitySeries>,
    /// Noise-free regional temperature, for inspection.
    pub regional_temperature: Vec<f64>,
    /// Hours inside an injected heatwave.
    pub heatwave: Vec<bool>,
}

struct Event {
    start_hour: usize,
    hours: usize,
    magnitude: f64,
}

/// Smooth bump: two-day ramp up, plateau, one-day ramp down.
fn event_profile(e: &Event, t: usize) -> f64 {
    if t < e.start_hour || t >= e.start_hour + e.hours {
        return 0.0;
    }
    let k = (t - e.start_hour) as f64;
    let rest = (e.start_hour + e.hours - t) as f64;
    let up = (k / 48.0).min(1.0);
    let down = (rest / 24.0).min(1.0);
    e.magnitude * up.min(down)
}

pub fn generate(options: &FixtureOptions) -> Fixture {
    let start = Timestamp::from_central(options.start_year, 1, 1, 0).expect("midnight exists");
    let end = Timestamp::from_central(options.start_year + options.years, 1, 1, 0).expect("midnight exists");
    let axis = HourlyAxis::new(start, end.hours_since(start).expect("aligned") as usize);
    let n = axis.len();
    let mut rng = ChaCha8Rng::seed_from_u64(options.seed);
    let normal = |sd: f64| Normal::new(0.0, sd).expect("positive sd");

    let local: Vec<_> = axis.iter().map(|t| t.local()).collect();
    let day_index: Vec<usize> = {
        let first = local[0].date();
        local.iter().map(|l| (l.date() - first).num_days() as usize).collect()
    };
    let n_days = day_index[n - 1] + 1;

    // Events placed by day of year within each simulated year.
    let mut heat_events = Vec::new();
    let mut cold_events = Vec::new();
    for y in 0..options.years {
        let year_start = axis
            .index_of(Timestamp::from_central(options.start_year + y, 1, 1, 0).expect("midnight"))
            .expect("inside axis");
        for slot in 0..3 {
            let day = 155 + slot * 28 + rng.gen_range(0..18);
            heat_events.push(Event {
                start_hour: year_start + day * 24 + 10,
                hours: rng.gen_range(5..10) * 24,
                magnitude: rng.gen_range(7.0..11.0),
            });
        }
        let snaps = rng.gen_range(1..=2);
        for s in 0..snaps {
            let day = if s == 0 { rng.gen_range(10..45) } else { rng.gen_range(330..350) };
            cold_events.push(Event {
                start_hour: year_start + day * 24,
                hours: rng.gen_range(3..6) * 24,
                magnitude: rng.gen_range(18.0..28.0),
            });
        }
    }

    let noise = normal(0.9);
    let mut anomaly = 0.0;
    let mut regional = vec![0.0; n];
    let mut heatwave = vec![false; n];
    for t in 0..n {
        let l = &local[t];
        let doy = l.date().ordinal0() as f64;
        let seasonal = 68.0 - 17.0 * (2.0 * std::f64::consts::PI * (doy - 20.0) / 365.25).cos();
        let diurnal = 9.0 * (2.0 * std::f64::consts::PI * (l.hour as f64 - 9.0) / 24.0).sin();
        anomaly = 0.97 * anomaly + noise.sample(&mut rng);
        let heat: f64 = heat_events.iter().map(|e| event_profile(e, t)).sum();
        let cold: f64 = cold_events.iter().map(|e| event_profile(e, t)).sum();
        heatwave[t] = heat > 0.0;
        regional[t] = seasonal + diurnal + anomaly + heat - cold;
    }

    let wet_days: Vec<bool> = (0..n_days).map(|_| rng.gen_bool(0.12)).collect();
    let city_noise = normal(0.7);
    let mut cities = Vec::new();
    for city in CITIES.iter() {
        let temp: Vec<f64> = regional.iter().map(|r| r + city.offset + city_noise.sample(&mut rng)).collect();
        let mut tmin = vec![f64::INFINITY; n_days];
        let mut tmax = vec![f64::NEG_INFINITY; n_days];
        for t in 0..n {
            let d = day_index[t];
            tmin[d] = tmin[d].min(temp[t]);
            tmax[d] = tmax[d].max(temp[t]);
        }
        let mut cols: [Vec<Option<f64>>; 5] = Default::default();
        for t in 0..n {
            let d = day_index[t];
            let prcp = if wet_days[d] && rng.gen_bool(0.3) { rng.gen_range(0.0..0.3) } else { 0.0 };
            let snow = if temp[t] < 32.0 { prcp * 10.0 } else { 0.0 };
            let round = |v: f64| (v * 100.0).round() / 100.0;
            cols[0].push(Some(round(temp[t])));
            cols[1].push(Some(round(tmin[d])));
            cols[2].push(Some(round(tmax[d])));
            cols[3].push(Some(round(prcp)));
            cols[4].push(Some(round(snow)));
        }
        cities.push(CitySeries { city: city.clone(), columns: cols });
    }

    let weighted_tavg: Vec<f64> = (0..n)
        .map(|t| CITIES.iter().zip(&cities).map(|(c, s)| c.weight * s.columns[0][t].expect("complete")).sum())
        .collect();
    let holidays = HolidayCalendar::us_federal();
    let level_noise = normal(0.0016);
    let load_noise = normal(0.01);
    let mut level = 0.0;
    let mut heat_stress = 0.0;
    let mut cold_stress = 0.0;
    let load: Vec<Option<f64>> = (0..n)
        .map(|t| {
            let l = &local[t];
            let temp = weighted_tavg[t];
            level = 0.9995 * level + level_noise.sample(&mut rng);
            heat_stress = 0.985 * heat_stress + 0.015 * (temp - 86.0).max(0.0);
            cold_stress = 0.97 * cold_stress + 0.03 * (35.0 - temp).max(0.0);
            let h = l.hour as f64;
            let shape = 1.0
                + 0.10 * (2.0 * std::f64::consts::PI * (h - 11.0) / 24.0).sin()
                + 0.04 * (4.0 * std::f64::consts::PI * (h - 7.0) / 24.0).sin();
            let weekend = if l.weekday >= 5 { 0.93 } else { 1.0 };
            let holiday = if holidays.is_holiday(l.date()) { 0.9 } else { 1.0 };
            let afternoon = (-((h - 16.0) / 4.0).powi(2)).exp();
            let cooling = 70.0 * (temp - 65.0).max(0.0).powf(1.2);
            let heating = 40.0 * (55.0 - temp).max(0.0).powf(1.3);
            let surge = 900.0 * heat_stress * (0.4 + afternoon) + 500.0 * cold_stress;
            let mw = (7200.0 * shape * weekend * holiday + cooling + heating + surge)
                * (1.0 + level)
                * (1.0 + load_noise.sample(&mut rng));
            Some((mw * 10.0).round() / 10.0)
        })
        .collect();

    let mut fixture = Fixture { axis, load, cities, regional_temperature: regional, heatwave };
    if options.inject_gaps {
        inject_gaps(&mut fixture, &mut rng);
    }
    fixture
}

fn inject_gaps(f: &mut Fixture, rng: &mut ChaCha8Rng) {
    let n = f.axis.len();
    let blank = |col: &mut Vec<Option<f64>>, len: usize, rng: &mut ChaCha8Rng| {
        let at = rng.gen_range(200..n - 200);
        for v in &mut col[at..at + len] {
            *v = None;
        }
    };
    for _ in 0..30 {
        let len = rng.gen_range(1..=3);
        blank(&mut f.load, len, rng);
    }
    for _ in 0..4 {
        blank(&mut f.load, 5, rng);
    }
    for city in &mut f.cities {
        for _ in 0..20 {
            let len = rng.gen_range(1..=4);
            let var = rng.gen_range(0..5);
            blank(&mut city.columns[var], len, rng);
        }
    }
}

fn fmt_value(v: Option<f64>) -> String {
    v.map_or(String::new(), |x| x.to_string())
}

/// Writes `load.csv`, one weather CSV per city and `config.toml` into
/// `dir`; returns the config path.
pub fn write_fixture(fixture: &Fixture, dir: &Path) -> io::Result<PathBuf> {
    fs::create_dir_all(dir)?;
    let mut load = io::BufWriter::new(fs::File::create(dir.join("load.csv"))?);
    writeln!(load, "timestamp,load_mw")?;
    for (t, v) in fixture.axis.iter().zip(&fixture.load) {
        writeln!(load, "{t},{}", fmt_value(*v))?;
        // One exact duplicate row, which ingestion collapses.
        if t == fixture.axis.at(1000) {
            writeln!(load, "{t},{}", fmt_value(*v))?;
        }
    }
    load.flush()?;
    for city in &fixture.cities {
        let mut w = io::BufWriter::new(fs::File::create(dir.join(city.city.file))?);
        writeln!(w, "timestamp,tavg,tmin,tmax,prcp,snow")?;
        for (i, t) in fixture.axis.iter().enumerate() {
            let c = &city.columns;
            writeln!(
                w,
                "{t},{},{},{},{},{}",
                fmt_value(c[0][i]),
                fmt_value(c[1][i]),
                fmt_value(c[2][i]),
                fmt_value(c[3][i]),
                fmt_value(c[4][i])
            )?;
        }
        w.flush()?;
    }
    let config = dir.join("config.toml");
    fs::write(&config, FIXTURE_CONFIG)?;
    Ok(config)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_and_shaped() {
        let opts = FixtureOptions { years: 1, ..Default::default() };
        let a = generate(&opts);
        let b = generate(&opts);
        assert_eq!(a.load, b.load);
        assert_eq!(a.axis.len(), 8760);
        assert!(a.load.iter().any(|v| v.is_none()));
        assert!(a.heatwave.iter().any(|&h| h));
        let observed: Vec<f64> = a.load.iter().flatten().copied().collect();
        let mean = observed.iter().sum::<f64>() / observed.len() as f64;
        assert!((5000.0..15000.0).contains(&mean), "mean load {mean}");
    }

    #[test]
    fn heatwaves_raise_load() {
        let f = generate(&FixtureOptions { inject_gaps: false, ..Default::default() });
        let summer = |hw: bool| {
            let v: Vec<f64> = (0..f.axis.len())
                .filter(|&t| {
                    let m = f.axis.at(t).local().month;
                    (6..=8).contains(&m) && f.heatwave[t] == hw
                })
                .map(|t| f.load[t].unwrap())
                .collect();
            v.iter().sum::<f64>() / v.len() as f64
        };
        assert!(summer(true) > 1.1 * summer(false));
    }
}
