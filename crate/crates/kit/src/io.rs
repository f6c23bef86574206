//! Telemetry and report file formats: JSON Lines trips, CSV tables and
//! GeoJSON map polylines.

use std::io::{self, BufRead, Write};

use leads_kit_core::analysis::LapReport;
use leads_kit_core::esc::Combined;
use leads_kit_core::model::{Channel, TelemetryFrame, Trip};
use leads_kit_core::Error as CoreError;
use serde::Serialize;

#[derive(Debug, thiserror::Error)]
pub enum FormatError {
    #[error("line {line}: {source}")]
    Json {
        line: usize,
        #[source]
        source: serde_json::Error,
    },
    #[error("line {line}: {source}")]
    Invalid {
        line: usize,
        #[source]
        source: CoreError,
    },
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Serialize(#[from] serde_json::Error),
}

/// Reads one frame per non-blank line. Errors carry 1-based line numbers.
pub fn read_jsonl(reader: impl BufRead) -> Result<Trip, FormatError> {
    let mut frames: Vec<TelemetryFrame> = Vec::new();
    let mut prev_t: Option<f64> = None;
    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let frame: TelemetryFrame = serde_json::from_str(&line).map_err(|source| FormatError::Json {
            line: line_no,
            source,
        })?;
        let invalid = |source| FormatError::Invalid {
            line: line_no,
            source,
        };
        frame.validate().map_err(invalid)?;
        if let Some(p) = prev_t {
            if !(frame.t > p) {
                return Err(invalid(CoreError::Ordering {
                    index: frames.len(),
                    prev: p,
                    next: frame.t,
                }));
            }
        }
        prev_t = Some(frame.t);
        frames.push(frame);
    }
    Trip::new(frames).map_err(|source| FormatError::Invalid { line: 0, source })
}

pub fn write_frame(mut writer: impl Write, frame: &TelemetryFrame) -> Result<(), FormatError> {
    serde_json::to_writer(&mut writer, frame)?;
    writer.write_all(b"\n")?;
    Ok(())
}

pub fn write_jsonl<'a>(
    mut writer: impl Write,
    frames: impl IntoIterator<Item = &'a TelemetryFrame>,
) -> Result<(), FormatError> {
    for f in frames {
        write_frame(&mut writer, f)?;
    }
    writer.flush()?;
    Ok(())
}

/// Flat CSV of every channel, `t` first, then [`Channel::ALL`] order.
/// Absent values are empty cells.
pub fn write_frames_csv<'a>(
    writer: impl Write,
    frames: impl IntoIterator<Item = &'a TelemetryFrame>,
) -> Result<(), FormatError> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header = vec!["t".to_string()];
    header.extend(Channel::ALL.iter().map(|c| c.name().to_string()));
    w.write_record(&header)?;
    for f in frames {
        let mut row = vec![f.t.to_string()];
        row.extend(
            Channel::ALL
                .iter()
                .map(|c| c.get(f).map(|v| v.to_string()).unwrap_or_default()),
        );
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InterventionRow {
    pub t: f64,
    pub system: String,
    pub throttle_scale: f64,
    pub brake_scale: f64,
    pub brake_add: f64,
    pub reason: String,
}

/// One row per intervening system, or a single `none` row for a frame
/// where nothing intervened.
pub fn intervention_rows(t: f64, combined: &Combined) -> Vec<InterventionRow> {
    if combined.active.is_empty() {
        return vec![InterventionRow {
            t,
            system: "none".into(),
            throttle_scale: 1.0,
            brake_scale: 1.0,
            brake_add: 0.0,
            reason: String::new(),
        }];
    }
    combined
        .active
        .iter()
        .map(|i| InterventionRow {
            t,
            system: i.source.name().into(),
            throttle_scale: i.throttle_scale,
            brake_scale: i.brake_scale,
            brake_add: i.brake_add,
            reason: i.reason.clone(),
        })
        .collect()
}

pub struct InterventionWriter<W: Write> {
    inner: csv::Writer<W>,
}

impl<W: Write> InterventionWriter<W> {
    pub fn new(writer: W) -> Self {
        Self {
            inner: csv::Writer::from_writer(writer),
        }
    }

    pub fn write(&mut self, row: &InterventionRow) -> Result<(), FormatError> {
        self.inner.serialize(row)?;
        Ok(())
    }

    pub fn finish(mut self) -> Result<(), FormatError> {
        self.inner.flush()?;
        Ok(())
    }
}

#[derive(Serialize)]
struct LapRow {
    lap: usize,
    start_frame: usize,
    end_frame: usize,
    duration: f64,
    distance_km: f64,
    speed_min: Option<f64>,
    speed_max: Option<f64>,
    speed_mean: Option<f64>,
    best: bool,
}

pub fn write_laps_csv(writer: impl Write, report: &LapReport) -> Result<(), FormatError> {
    let mut w = csv::WriterBuilder::new().from_writer(writer);
    if report.laps.is_empty() {
        w.write_record([
            "lap",
            "start_frame",
            "end_frame",
            "duration",
            "distance_km",
            "speed_min",
            "speed_max",
            "speed_mean",
            "best",
        ])?;
    }
    for l in &report.laps {
        w.serialize(LapRow {
            lap: l.lap,
            start_frame: l.start_frame,
            end_frame: l.end_frame,
            duration: l.duration,
            distance_km: l.distance,
            speed_min: l.speed.map(|s| s.min),
            speed_max: l.speed.map(|s| s.max),
            speed_mean: l.speed.map(|s| s.mean),
            best: report.best == Some(l.lap),
        })?;
    }
    w.flush()?;
    Ok(())
}

/// GeoJSON `Feature` holding a `LineString`; coordinates are `[lon, lat]`.
pub fn geojson_linestring(map: &[(f64, f64)]) -> serde_json::Value {
    serde_json::json!({
        "type": "Feature",
        "properties": {},
        "geometry": {
            "type": "LineString",
            "coordinates": map.iter().map(|&(lat, lon)| [lon, lat]).collect::<Vec<_>>(),
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn jsonl_round_trip_omits_absent() {
        let mut f = TelemetryFrame::at(0.5);
        f.speed = Some(12.0);
        let mut buf = Vec::new();
        write_jsonl(&mut buf, [&f]).unwrap();
        assert_eq!(String::from_utf8(buf.clone()).unwrap(), "{\"t\":0.5,\"speed\":12.0}\n");
        let trip = read_jsonl(buf.as_slice()).unwrap();
        assert_eq!(trip.frames(), &[f]);
    }

    #[test]
    fn errors_name_the_line() {
        let text = "{\"t\":0}\n\n{\"t\":1,\"speed\":\"fast\"}\n";
        let err = read_jsonl(text.as_bytes()).unwrap_err();
        assert!(matches!(err, FormatError::Json { line: 3, .. }), "{err}");
        let err = read_jsonl("{\"t\":1}\n{\"t\":1}\n".as_bytes()).unwrap_err();
        assert!(matches!(err, FormatError::Invalid { line: 2, .. }));
        let err = read_jsonl("{\"t\":0,\"brake\":2}\n".as_bytes()).unwrap_err();
        assert!(err.to_string().starts_with("line 1:"));
    }

    #[test]
    fn geojson_swaps_axes() {
        let g = geojson_linestring(&[(45.0, 7.0)]);
        assert_eq!(g["geometry"]["coordinates"][0][0], 7.0);
        assert_eq!(g["geometry"]["type"], "LineString");
    }

    #[test]
    fn frames_csv_has_fixed_header() {
        let mut buf = Vec::new();
        write_frames_csv(&mut buf, [&TelemetryFrame::at(1.0)]).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let header = text.lines().next().unwrap();
        assert!(header.starts_with("t,front_wheel_speed,rear_wheel_speed,"));
        assert_eq!(header.split(',').count(), 1 + Channel::ALL.len());
    }
}
