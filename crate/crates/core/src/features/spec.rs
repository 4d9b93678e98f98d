use serde::{Deserialize, Serialize};

use super::calendar::CalendarField;
use super::ops::{RollingStat, SpikeMode, TempSpikeMode};
use super::{FeatureError, DEFAULT_COLD_QUANTILE, DEFAULT_DEGREE_BASELINE, DEFAULT_EXTREME_QUANTILE};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HolidayField {
    IsHoliday,
    HolidayXHour,
    IsHolidayAndCold,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DegreeSide {
    Cooling,
    Heating,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FlagSide {
    Heat,
    Cold,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CyclicPart {
    Sin,
    Cos,
}

#[derive(Debug, Clone, PartialEq)]
pub enum FeatureKind {
    Calendar { field: CalendarField },
    /// `column` is the `tmin` source and `quantile` the cold threshold for
    /// [`HolidayField::IsHolidayAndCold`].
    Holiday { field: HolidayField, column: String, quantile: f64 },
    /// A dataset column used as is.
    Weather { column: String },
    Lag { column: String, hours: usize },
    Rolling { column: String, window: usize, stat: RollingStat, shift: usize },
    DegreeDay { column: String, side: DegreeSide, baseline: f64 },
    /// `shift: None` means 1 hour, or 0 when leakage is explicitly allowed.
    Spike { column: String, window: usize, mode: SpikeMode, shift: Option<usize> },
    TempSpike { tmax: String, tavg: String, mode: TempSpikeMode },
    Interaction { left: String, right: String },
    /// Heat: `x > Q_q(train)`. Cold: `x < Q_{1−q}(train)`.
    Flag { column: String, side: FlagSide, quantile: f64 },
    Cyclical { column: String, period: f64, part: CyclicPart },
}

/// One named feature column.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawFeatureSpec", into = "RawFeatureSpec")]
pub struct FeatureSpec {
    pub name: String,
    pub kind: FeatureKind,
    /// `false` keeps the column as an operand only, out of the matrix.
    pub emit: bool,
}

impl FeatureSpec {
    pub fn new(name: impl Into<String>, kind: FeatureKind) -> Self {
        FeatureSpec { name: name.into(), kind, emit: true }
    }

    pub fn calendar(name: &str, field: CalendarField) -> Self {
        Self::new(name, FeatureKind::Calendar { field })
    }

    pub fn holiday(name: &str, field: HolidayField) -> Self {
        Self::new(name, FeatureKind::Holiday { field, column: "tmin".into(), quantile: DEFAULT_COLD_QUANTILE })
    }

    pub fn weather(name: &str, column: &str) -> Self {
        Self::new(name, FeatureKind::Weather { column: column.into() })
    }

    pub fn lag(name: &str, column: &str, hours: usize) -> Self {
        Self::new(name, FeatureKind::Lag { column: column.into(), hours })
    }

    /// Rolling statistic shifted by one hour.
    pub fn rolling(name: &str, column: &str, window: usize, stat: RollingStat) -> Self {
        Self::new(name, FeatureKind::Rolling { column: column.into(), window, stat, shift: 1 })
    }

    pub fn degree_day(name: &str, column: &str, side: DegreeSide) -> Self {
        Self::new(name, FeatureKind::DegreeDay { column: column.into(), side, baseline: DEFAULT_DEGREE_BASELINE })
    }

    pub fn spike(name: &str, column: &str, window: usize, mode: SpikeMode) -> Self {
        Self::new(name, FeatureKind::Spike { column: column.into(), window, mode, shift: None })
    }

    pub fn temp_spike(name: &str, tmax: &str, tavg: &str, mode: TempSpikeMode) -> Self {
        Self::new(name, FeatureKind::TempSpike { tmax: tmax.into(), tavg: tavg.into(), mode })
    }

    pub fn interaction(name: &str, left: &str, right: &str) -> Self {
        Self::new(name, FeatureKind::Interaction { left: left.into(), right: right.into() })
    }

    pub fn flag(name: &str, column: &str, side: FlagSide) -> Self {
        Self::new(name, FeatureKind::Flag { column: column.into(), side, quantile: DEFAULT_EXTREME_QUANTILE })
    }

    pub fn cyclical(name: &str, column: &str, period: f64, part: CyclicPart) -> Self {
        Self::new(name, FeatureKind::Cyclical { column: column.into(), period, part })
    }

    /// Columns this feature reads.
    pub fn operands(&self) -> Vec<&str> {
        match &self.kind {
            FeatureKind::Calendar { .. } => vec![],
            FeatureKind::Holiday { field: HolidayField::IsHolidayAndCold, column, .. } => vec![column],
            FeatureKind::Holiday { .. } => vec![],
            FeatureKind::Weather { column }
            | FeatureKind::Lag { column, .. }
            | FeatureKind::Rolling { column, .. }
            | FeatureKind::DegreeDay { column, .. }
            | FeatureKind::Spike { column, .. }
            | FeatureKind::Flag { column, .. }
            | FeatureKind::Cyclical { column, .. } => vec![column],
            FeatureKind::TempSpike { tmax, tavg, .. } => vec![tmax, tavg],
            FeatureKind::Interaction { left, right } => vec![left, right],
        }
    }

    pub(super) fn validate(&self) -> Result<(), FeatureError> {
        let bad = |reason: &str| Err(FeatureError::InvalidParameter { feature: self.name.clone(), reason: reason.into() });
        let quantile_ok = |q: f64| q > 0.0 && q < 1.0;
        match &self.kind {
            FeatureKind::Lag { hours, .. } if *hours == 0 => bad("lag must be at least one hour"),
            FeatureKind::Rolling { window, .. } if *window == 0 => bad("window must be at least one hour"),
            FeatureKind::Spike { window, mode, .. } if *window == 0 || (*mode == SpikeMode::Zscore && *window < 2) => {
                bad("spike window must be at least 1 (2 for zscore)")
            }
            FeatureKind::DegreeDay { baseline, .. } if !baseline.is_finite() => bad("baseline must be finite"),
            FeatureKind::Cyclical { period, .. } if !(*period > 0.0 && period.is_finite()) => bad("period must be positive"),
            FeatureKind::Flag { quantile, .. } | FeatureKind::Holiday { quantile, .. } if !quantile_ok(*quantile) => {
                bad("quantile must lie in (0, 1)")
            }
            _ => Ok(()),
        }
    }
}

/// Flat, human-editable form of a [`FeatureSpec`] as written in config files.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawFeatureSpec {
    name: String,
    kind: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    field: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    column: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    hours: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    window: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    stat: Option<RollingStat>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    shift: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    side: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    baseline: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    mode: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    tmax: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    tavg: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    left: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    right: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    quantile: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    period: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    part: Option<CyclicPart>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    emit: Option<bool>,
}

fn parse_enum<T: for<'de> Deserialize<'de>>(name: &str, key: &str, text: &str) -> Result<T, String> {
    T::deserialize(serde::de::value::StrDeserializer::<serde::de::value::Error>::new(text))
        .map_err(|_| format!("feature `{name}`: `{text}` is not a valid `{key}`"))
}

impl TryFrom<RawFeatureSpec> for FeatureSpec {
    type Error = String;

    fn try_from(raw: RawFeatureSpec) -> Result<Self, String> {
        let name = raw.name.clone();
        let mut used: Vec<&'static str> = Vec::new();
        macro_rules! take {
            ($field:ident) => {{
                used.push(stringify!($field));
                raw.$field.clone()
            }};
        }
        macro_rules! need {
            ($field:ident) => {{
                take!($field).ok_or_else(|| {
                    format!("feature `{}` of kind `{}` needs `{}`", name, raw.kind, stringify!($field))
                })?
            }};
        }
        let kind = match raw.kind.as_str() {
            "calendar" => FeatureKind::Calendar { field: parse_enum(&name, "field", &need!(field))? },
            "holiday" => FeatureKind::Holiday {
                field: parse_enum(&name, "field", &need!(field))?,
                column: take!(column).unwrap_or_else(|| "tmin".into()),
                quantile: take!(quantile).unwrap_or(DEFAULT_COLD_QUANTILE),
            },
            "weather" => FeatureKind::Weather { column: need!(column) },
            "lag" => FeatureKind::Lag { column: need!(column), hours: need!(hours) },
            "rolling" => FeatureKind::Rolling {
                column: need!(column),
                window: need!(window),
                stat: need!(stat),
                shift: take!(shift).unwrap_or(1),
            },
            "degree_day" => FeatureKind::DegreeDay {
                column: take!(column).unwrap_or_else(|| "tavg".into()),
                side: parse_enum(&name, "side", &need!(side))?,
                baseline: take!(baseline).unwrap_or(DEFAULT_DEGREE_BASELINE),
            },
            "spike" => FeatureKind::Spike {
                column: take!(column).unwrap_or_else(|| "load".into()),
                window: need!(window),
                mode: parse_enum(&name, "mode", &take!(mode).unwrap_or_else(|| "ratio".into()))?,
                shift: take!(shift),
            },
            "temp_spike" => FeatureKind::TempSpike {
                tmax: take!(tmax).unwrap_or_else(|| "tmax".into()),
                tavg: take!(tavg).unwrap_or_else(|| "tavg".into()),
                mode: parse_enum(&name, "mode", &take!(mode).unwrap_or_else(|| "ratio".into()))?,
            },
            "interaction" => FeatureKind::Interaction { left: need!(left), right: need!(right) },
            "flag" => FeatureKind::Flag {
                column: need!(column),
                side: parse_enum(&name, "side", &need!(side))?,
                quantile: take!(quantile).unwrap_or(DEFAULT_EXTREME_QUANTILE),
            },
            "cyclical" => FeatureKind::Cyclical { column: need!(column), period: need!(period), part: need!(part) },
            other => return Err(format!("feature `{name}`: unknown kind `{other}`")),
        };
        let present: [(&str, bool); 17] = [
            ("field", raw.field.is_some()),
            ("column", raw.column.is_some()),
            ("hours", raw.hours.is_some()),
            ("window", raw.window.is_some()),
            ("stat", raw.stat.is_some()),
            ("shift", raw.shift.is_some()),
            ("side", raw.side.is_some()),
            ("baseline", raw.baseline.is_some()),
            ("mode", raw.mode.is_some()),
            ("tmax", raw.tmax.is_some()),
            ("tavg", raw.tavg.is_some()),
            ("left", raw.left.is_some()),
            ("right", raw.right.is_some()),
            ("quantile", raw.quantile.is_some()),
            ("period", raw.period.is_some()),
            ("part", raw.part.is_some()),
            ("emit", false),
        ];
        if let Some((key, _)) = present.iter().find(|(key, set)| *set && !used.contains(key)) {
            return Err(format!("feature `{name}`: `{key}` does not apply to kind `{}`", raw.kind));
        }
        Ok(FeatureSpec { name, kind, emit: raw.emit.unwrap_or(true) })
    }
}

fn enum_text<T: Serialize>(value: &T) -> String {
    match serde_json::to_value(value) {
        Ok(serde_json::Value::String(s)) => s,
        _ => unreachable!("unit enum variants serialize as strings"),
    }
}

impl From<FeatureSpec> for RawFeatureSpec {
    fn from(spec: FeatureSpec) -> Self {
        let mut raw = RawFeatureSpec {
            name: spec.name,
            emit: (!spec.emit).then_some(false),
            ..Default::default()
        };
        match spec.kind {
            FeatureKind::Calendar { field } => {
                raw.kind = "calendar".into();
                raw.field = Some(enum_text(&field));
            }
            FeatureKind::Holiday { field, column, quantile } => {
                raw.kind = "holiday".into();
                raw.field = Some(enum_text(&field));
                if field == HolidayField::IsHolidayAndCold {
                    raw.column = Some(column);
                    raw.quantile = Some(quantile);
                }
            }
            FeatureKind::Weather { column } => {
                raw.kind = "weather".into();
                raw.column = Some(column);
            }
            FeatureKind::Lag { column, hours } => {
                raw.kind = "lag".into();
                raw.column = Some(column);
                raw.hours = Some(hours);
            }
            FeatureKind::Rolling { column, window, stat, shift } => {
                raw.kind = "rolling".into();
                raw.column = Some(column);
                raw.window = Some(window);
                raw.stat = Some(stat);
                raw.shift = Some(shift);
            }
            FeatureKind::DegreeDay { column, side, baseline } => {
                raw.kind = "degree_day".into();
                raw.column = Some(column);
                raw.side = Some(enum_text(&side));
                raw.baseline = Some(baseline);
            }
            FeatureKind::Spike { column, window, mode, shift } => {
                raw.kind = "spike".into();
                raw.column = Some(column);
                raw.window = Some(window);
                raw.mode = Some(enum_text(&mode));
                raw.shift = shift;
            }
            FeatureKind::TempSpike { tmax, tavg, mode } => {
                raw.kind = "temp_spike".into();
                raw.tmax = Some(tmax);
                raw.tavg = Some(tavg);
                raw.mode = Some(enum_text(&mode));
            }
            FeatureKind::Interaction { left, right } => {
                raw.kind = "interaction".into();
                raw.left = Some(left);
                raw.right = Some(right);
            }
            FeatureKind::Flag { column, side, quantile } => {
                raw.kind = "flag".into();
                raw.column = Some(column);
                raw.side = Some(enum_text(&side));
                raw.quantile = Some(quantile);
            }
            FeatureKind::Cyclical { column, period, part } => {
                raw.kind = "cyclical".into();
                raw.column = Some(column);
                raw.period = Some(period);
                raw.part = Some(part);
            }
        }
        raw
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[derive(Debug, Deserialize, Serialize)]
    struct Wrapper {
        features: Vec<FeatureSpec>,
    }

    #[test]
    fn parses_config_snippet() {
        let text = r#"
            [[features]]
            name = "load_roll_std_168"
            kind = "rolling"
            column = "load"
            window = 168
            stat = "std"

            [[features]]
            name = "CDD"
            kind = "degree_day"
            side = "cooling"

            [[features]]
            name = "hour_sin"
            kind = "cyclical"
            column = "hour"
            period = 24.0
            part = "sin"
        "#;
        let w: Wrapper = toml::from_str(text).unwrap();
        assert_eq!(w.features[0], FeatureSpec::rolling("load_roll_std_168", "load", 168, RollingStat::Std));
        assert_eq!(w.features[1], FeatureSpec::degree_day("CDD", "tavg", DegreeSide::Cooling));
        let back: Wrapper = toml::from_str(&toml::to_string(&w).unwrap()).unwrap();
        assert_eq!(back.features, w.features);
    }

    #[test]
    fn rejects_unknown_and_irrelevant_keys() {
        let unknown = "[[features]]\nname = \"x\"\nkind = \"lag\"\ncolumn = \"load\"\nhours = 24\ncolour = 1\n";
        assert!(toml::from_str::<Wrapper>(unknown).is_err());
        let irrelevant = "[[features]]\nname = \"x\"\nkind = \"lag\"\ncolumn = \"load\"\nhours = 24\nwindow = 3\n";
        let err = toml::from_str::<Wrapper>(irrelevant).unwrap_err().to_string();
        assert!(err.contains("`window` does not apply"), "{err}");
        let missing = "[[features]]\nname = \"x\"\nkind = \"lag\"\ncolumn = \"load\"\n";
        assert!(toml::from_str::<Wrapper>(missing).unwrap_err().to_string().contains("needs `hours`"));
        let bad_mode = "[[features]]\nname = \"x\"\nkind = \"spike\"\nwindow = 24\nmode = \"wild\"\n";
        assert!(toml::from_str::<Wrapper>(bad_mode).is_err());
    }
}
