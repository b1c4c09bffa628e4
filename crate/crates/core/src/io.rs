//! Recording files.
//!
//! Two on-disk layouts share one JSON sidecar header (`<stem>.json`):
//!
//! * columnar binary: `<stem>.bin` holds the samples channel-major as
//!   little-endian IEEE-754 floats (`f32le` by default, `f64le` optional),
//!   with no padding or framing; `<stem>.events.csv` holds the event table.
//! * csv: `<stem>.csv` holds one row per sample with a `sample` column, one
//!   column per channel, then the event columns, which are empty on rows
//!   without an onset.
//!
//! Event table columns, in order: `sample_index, block, repetition,
//! target_symbol, is_target, g0..g5` with `is_target` written as `0`/`1`.

use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Condition, FlashGroup, Recording, TagEvent, GROUP_SIZE};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RecordingFormat {
    ColumnarBinary,
    Csv,
}

impl RecordingFormat {
    pub fn extension(self) -> &'static str {
        match self {
            RecordingFormat::ColumnarBinary => "bin",
            RecordingFormat::Csv => "csv",
        }
    }

    /// Guess from the data file extension.
    pub fn from_path(path: &Path) -> Option<Self> {
        match path.extension()?.to_str()? {
            "bin" => Some(RecordingFormat::ColumnarBinary),
            "csv" => Some(RecordingFormat::Csv),
            _ => None,
        }
    }
}

impl std::str::FromStr for RecordingFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "columnar_binary" | "binary" | "bin" => Ok(RecordingFormat::ColumnarBinary),
            "csv" => Ok(RecordingFormat::Csv),
            other => Err(Error::InvalidArgument(format!("unknown recording format {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum SampleType {
    #[default]
    F32le,
    F64le,
}

impl SampleType {
    fn width(self) -> usize {
        match self {
            SampleType::F32le => 4,
            SampleType::F64le => 8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordingHeader {
    pub format_version: u32,
    pub format: RecordingFormat,
    pub subject_id: String,
    pub condition: Condition,
    pub sample_rate: f64,
    pub channel_labels: Vec<String>,
    pub n_samples: usize,
    pub n_events: usize,
    #[serde(default)]
    pub sample_type: SampleType,
    pub data_file: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub events_file: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct SaveOptions {
    pub sample_type: SampleType,
}

pub fn header_path(data_path: &Path) -> PathBuf {
    data_path.with_extension("json")
}

pub fn events_path(data_path: &Path) -> PathBuf {
    data_path.with_extension("events.csv")
}

pub fn save_recording(rec: &Recording, path: &Path, format: RecordingFormat) -> Result<()> {
    save_recording_with(rec, path, format, SaveOptions::default())
}

pub fn save_recording_with(
    rec: &Recording,
    path: &Path,
    format: RecordingFormat,
    options: SaveOptions,
) -> Result<()> {
    let file_name = |p: &Path| {
        p.file_name()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default()
    };
    let events_file = match format {
        RecordingFormat::ColumnarBinary => Some(events_path(path)),
        RecordingFormat::Csv => None,
    };
    let header = RecordingHeader {
        format_version: FORMAT_VERSION,
        format,
        subject_id: rec.subject_id().to_string(),
        condition: rec.condition(),
        sample_rate: rec.sample_rate(),
        channel_labels: rec.channel_labels().to_vec(),
        n_samples: rec.n_samples(),
        n_events: rec.events().len(),
        sample_type: match format {
            RecordingFormat::ColumnarBinary => options.sample_type,
            // csv text is written with shortest round-trip formatting
            RecordingFormat::Csv => SampleType::F64le,
        },
        data_file: file_name(path),
        events_file: events_file.as_deref().map(file_name),
    };

    match format {
        RecordingFormat::ColumnarBinary => {
            write_binary_samples(rec, path, options.sample_type)?;
            write_event_table(events_file.as_deref().expect("binary has events file"), rec.events())?;
        }
        RecordingFormat::Csv => write_csv_samples(rec, path)?,
    }
    let hp = header_path(path);
    let mut json = serde_json::to_string_pretty(&header)?;
    json.push('\n');
    fs::write(&hp, json).map_err(|e| Error::io(&hp, e))
}

pub fn load_recording(path: &Path, format: RecordingFormat) -> Result<Recording> {
    let header = read_header(path)?;
    if header.format != format {
        return Err(Error::MalformedHeader {
            path: header_path(path),
            reason: format!(
                "header declares format {:?}, caller requested {:?}",
                header.format, format
            ),
        });
    }
    let (samples, events) = match format {
        RecordingFormat::ColumnarBinary => {
            let samples = read_binary_samples(path, &header)?;
            let ev_path = match &header.events_file {
                Some(name) => path.with_file_name(name),
                None => events_path(path),
            };
            (samples, read_event_table(&ev_path)?)
        }
        RecordingFormat::Csv => read_csv_samples(path, &header)?,
    };
    if events.len() != header.n_events {
        return Err(Error::MalformedEvents(format!(
            "header declares {} events, table has {}",
            header.n_events,
            events.len()
        )));
    }
    let n_samples = samples.first().map_or(0, Vec::len);
    if let Some(ev) = events.iter().find(|e| e.sample_index >= n_samples) {
        return Err(Error::EventOutOfRange {
            sample_index: ev.sample_index,
            n_samples,
        });
    }
    let mut events = events;
    events.sort_by_key(|e| e.sample_index);
    Recording::new(
        header.subject_id,
        header.condition,
        header.sample_rate,
        header.channel_labels,
        samples,
        events,
    )
}

pub fn read_header(data_path: &Path) -> Result<RecordingHeader> {
    let hp = header_path(data_path);
    let text = fs::read_to_string(&hp).map_err(|e| Error::io(&hp, e))?;
    let header: RecordingHeader =
        serde_json::from_str(&text).map_err(|e| Error::MalformedHeader {
            path: hp.clone(),
            reason: e.to_string(),
        })?;
    let malformed = |reason: String| Error::MalformedHeader {
        path: hp.clone(),
        reason,
    };
    if header.format_version != FORMAT_VERSION {
        return Err(malformed(format!(
            "unsupported format_version {}",
            header.format_version
        )));
    }
    if !(header.sample_rate.is_finite() && header.sample_rate > 0.0) {
        return Err(malformed(format!("sample_rate {} is not positive", header.sample_rate)));
    }
    if header.channel_labels.is_empty() {
        return Err(malformed("no channel labels".into()));
    }
    Ok(header)
}

fn write_binary_samples(rec: &Recording, path: &Path, sample_type: SampleType) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for row in rec.samples() {
        for &v in row {
            let res = match sample_type {
                SampleType::F32le => w.write_all(&(v as f32).to_le_bytes()),
                SampleType::F64le => w.write_all(&v.to_le_bytes()),
            };
            res.map_err(|e| Error::io(path, e))?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn read_binary_samples(path: &Path, header: &RecordingHeader) -> Result<Vec<Vec<f64>>> {
    let mut bytes = Vec::new();
    File::open(path)
        .and_then(|f| BufReader::new(f).read_to_end(&mut bytes))
        .map_err(|e| Error::io(path, e))?;
    let width = header.sample_type.width();
    let row_bytes = header.n_samples * width;
    let n_channels = header.channel_labels.len();
    if row_bytes == 0 {
        if !bytes.is_empty() {
            return Err(Error::ChannelMismatch {
                declared: n_channels,
                found: 0,
            });
        }
        return Ok(vec![Vec::new(); n_channels]);
    }
    if bytes.len() % row_bytes != 0 || bytes.len() / row_bytes != n_channels {
        return Err(Error::ChannelMismatch {
            declared: n_channels,
            found: bytes.len() / row_bytes,
        });
    }
    Ok(bytes
        .chunks_exact(row_bytes)
        .map(|row| match header.sample_type {
            SampleType::F32le => row
                .chunks_exact(4)
                .map(|b| f32::from_le_bytes(b.try_into().unwrap()) as f64)
                .collect(),
            SampleType::F64le => row
                .chunks_exact(8)
                .map(|b| f64::from_le_bytes(b.try_into().unwrap()))
                .collect(),
        })
        .collect())
}

const EVENT_COLUMNS: [&str; 11] = [
    "sample_index",
    "block",
    "repetition",
    "target_symbol",
    "is_target",
    "g0",
    "g1",
    "g2",
    "g3",
    "g4",
    "g5",
];

fn event_fields(ev: &TagEvent) -> [String; 11] {
    let g = ev.flash_group.symbols();
    [
        ev.sample_index.to_string(),
        ev.block_index.to_string(),
        ev.repetition_index.to_string(),
        ev.target_symbol.to_string(),
        u8::from(ev.is_target).to_string(),
        g[0].to_string(),
        g[1].to_string(),
        g[2].to_string(),
        g[3].to_string(),
        g[4].to_string(),
        g[5].to_string(),
    ]
}

fn parse_event(fields: &[&str]) -> Result<TagEvent> {
    let num = |i: usize| -> Result<u64> {
        fields[i].trim().parse::<u64>().map_err(|_| {
            Error::MalformedEvents(format!(
                "column {} has non-integer value {:?}",
                EVENT_COLUMNS[i], fields[i]
            ))
        })
    };
    let small = |i: usize| -> Result<u8> {
        u8::try_from(num(i)?).map_err(|_| {
            Error::MalformedEvents(format!("column {} value {} too large", EVENT_COLUMNS[i], fields[i]))
        })
    };
    let is_target = match fields[4].trim() {
        "0" | "false" => false,
        "1" | "true" => true,
        other => {
            return Err(Error::MalformedEvents(format!("is_target value {other:?}")));
        }
    };
    let mut group = [0u8; GROUP_SIZE];
    for (k, slot) in group.iter_mut().enumerate() {
        *slot = small(5 + k)?;
    }
    let ev = TagEvent {
        sample_index: usize::try_from(num(0)?)
            .map_err(|_| Error::MalformedEvents(format!("sample index {} too large", fields[0])))?,
        flash_group: FlashGroup::new(group)
            .map_err(|e| Error::MalformedEvents(e.to_string()))?,
        target_symbol: small(3)?,
        is_target,
        block_index: small(1)?,
        repetition_index: small(2)?,
    };
    ev.validate()
        .map_err(|e| Error::MalformedEvents(e.to_string()))?;
    Ok(ev)
}

pub fn write_event_table(path: &Path, events: &[TagEvent]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_io(path, e))?;
    w.write_record(EVENT_COLUMNS)?;
    for ev in events {
        w.write_record(event_fields(ev))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_event_table(path: &Path) -> Result<Vec<TagEvent>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_io(path, e))?;
    let headers = r.headers()?.clone();
    if headers.iter().collect::<Vec<_>>() != EVENT_COLUMNS {
        return Err(Error::MalformedEvents(format!(
            "unexpected event columns {:?}",
            headers.iter().collect::<Vec<_>>()
        )));
    }
    let mut events = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let fields: Vec<&str> = rec.iter().collect();
        events.push(parse_event(&fields)?);
    }
    Ok(events)
}

fn write_csv_samples(rec: &Recording, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_io(path, e))?;
    let mut head = vec!["sample".to_string()];
    head.extend(rec.channel_labels().iter().cloned());
    head.extend(EVENT_COLUMNS.iter().skip(1).map(|s| s.to_string()));
    w.write_record(&head)?;

    let mut events = rec.events().iter().peekable();
    let mut row: Vec<String> = Vec::with_capacity(head.len());
    for t in 0..rec.n_samples() {
        row.clear();
        row.push(t.to_string());
        row.extend(rec.samples().iter().map(|ch| ch[t].to_string()));
        match events.next_if(|e| e.sample_index == t) {
            Some(ev) => row.extend(event_fields(ev).into_iter().skip(1)),
            None => row.extend(std::iter::repeat_n(String::new(), EVENT_COLUMNS.len() - 1)),
        }
        w.write_record(&row)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn read_csv_samples(
    path: &Path,
    header: &RecordingHeader,
) -> Result<(Vec<Vec<f64>>, Vec<TagEvent>)> {
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_io(path, e))?;
    let n_channels = header.channel_labels.len();
    let n_event_cols = EVENT_COLUMNS.len() - 1;
    let cols = r.headers()?.len();
    if cols < 1 + n_event_cols || cols - 1 - n_event_cols != n_channels {
        return Err(Error::ChannelMismatch {
            declared: n_channels,
            found: cols.saturating_sub(1 + n_event_cols),
        });
    }
    let mut samples = vec![Vec::with_capacity(header.n_samples); n_channels];
    let mut events = Vec::new();
    for (t, rec) in r.records().enumerate() {
        let rec = rec?;
        for (c, ch) in samples.iter_mut().enumerate() {
            let field = &rec[1 + c];
            ch.push(field.parse::<f64>().map_err(|_| {
                Error::InvalidRecording(format!("row {t}: bad sample value {field:?}"))
            })?);
        }
        let ev_fields: Vec<&str> = rec.iter().skip(1 + n_channels).collect();
        if ev_fields.iter().all(|f| f.is_empty()) {
            continue;
        }
        let mut fields = vec![rec[0].to_string()];
        fields.extend(ev_fields.iter().map(|s| s.to_string()));
        let refs: Vec<&str> = fields.iter().map(String::as_str).collect();
        events.push(parse_event(&refs)?);
    }
    let found = samples.first().map_or(0, Vec::len);
    if found != header.n_samples {
        return Err(Error::InvalidRecording(format!(
            "header declares {} samples, csv has {found}",
            header.n_samples
        )));
    }
    Ok((samples, events))
}

fn csv_io(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::MalformedEvents(format!("{other:?}")),
    }
}
