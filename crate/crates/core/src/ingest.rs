//! Raw AIS loading, ROI/POI filtering, per-vessel grouping and dataset files.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{point_in_roi, validate_record, AisRecord, PortConfig};

/// One vessel's records in strictly increasing time order.
#[derive(Debug, Clone, PartialEq)]
pub struct VesselTrack {
    pub mmsi: u64,
    pub records: Vec<AisRecord>,
}

impl VesselTrack {
    /// Sorts by timestamp and collapses equal timestamps, keeping the last
    /// occurrence in input order.
    pub fn from_unsorted(mmsi: u64, mut records: Vec<AisRecord>) -> Self {
        records.sort_by_key(|r| r.timestamp);
        let mut out: Vec<AisRecord> = Vec::with_capacity(records.len());
        for r in records {
            match out.last_mut() {
                Some(prev) if prev.timestamp == r.timestamp => *prev = r,
                _ => out.push(r),
            }
        }
        Self { mmsi, records: out }
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }
}

/// Record counts before and after a named stage.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Stage {
    pub name: String,
    pub before: usize,
    pub after: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub port: PortConfig,
    /// Sorted by mmsi.
    pub tracks: Vec<VesselTrack>,
    pub provenance: Vec<Stage>,
}

impl Dataset {
    /// Groups records into tracks. Equal `(mmsi, timestamp)` pairs keep the
    /// last record.
    pub fn from_records(
        port: PortConfig,
        records: impl IntoIterator<Item = AisRecord>,
        provenance: Vec<Stage>,
    ) -> Self {
        let mut groups: BTreeMap<u64, Vec<AisRecord>> = BTreeMap::new();
        for r in records {
            groups.entry(r.mmsi).or_default().push(r);
        }
        let tracks = groups
            .into_iter()
            .map(|(mmsi, recs)| VesselTrack::from_unsorted(mmsi, recs))
            .collect();
        Self {
            port,
            tracks,
            provenance,
        }
    }

    pub fn record_count(&self) -> usize {
        self.tracks.iter().map(VesselTrack::len).sum()
    }

    pub fn vessel_count(&self) -> usize {
        self.tracks.len()
    }

    pub fn records(&self) -> impl Iterator<Item = &AisRecord> {
        self.tracks.iter().flat_map(|t| t.records.iter())
    }

    pub fn is_empty(&self) -> bool {
        self.record_count() == 0
    }

    /// Lines skipped as unparseable during [`load_raw`].
    pub fn skipped_lines(&self) -> usize {
        self.provenance
            .iter()
            .find(|s| s.name == "parse")
            .map_or(0, |s| s.before - s.after)
    }

    /// Keeps records satisfying `keep` and logs the stage.
    pub fn filter_records(&self, stage: &str, keep: impl Fn(&AisRecord) -> bool + Sync) -> Dataset {
        self.map_tracks(stage, |t| t.records.iter().filter(|r| keep(r)).cloned().collect())
    }

    /// Replaces each track's records with `f(track)`, dropping tracks that
    /// become empty, and logs the stage.
    pub fn map_tracks(
        &self,
        stage: &str,
        f: impl Fn(&VesselTrack) -> Vec<AisRecord> + Sync,
    ) -> Dataset {
        use rayon::prelude::*;
        let tracks: Vec<VesselTrack> = self
            .tracks
            .par_iter()
            .map(|t| VesselTrack {
                mmsi: t.mmsi,
                records: f(t),
            })
            .filter(|t| !t.is_empty())
            .collect();
        let mut out = Dataset {
            port: self.port.clone(),
            tracks,
            provenance: self.provenance.clone(),
        };
        out.push_stage(stage, self.record_count());
        out
    }

    pub fn push_stage(&mut self, name: &str, before: usize) {
        let after = self.record_count();
        self.provenance.push(Stage {
            name: name.to_string(),
            before,
            after,
        });
    }

    /// Subset restricted to the given vessels (stage not logged).
    pub fn with_vessels(&self, mmsis: &[u64]) -> Dataset {
        let tracks = self
            .tracks
            .iter()
            .filter(|t| mmsis.binary_search(&t.mmsi).is_ok())
            .cloned()
            .collect();
        Dataset {
            port: self.port.clone(),
            tracks,
            provenance: self.provenance.clone(),
        }
    }

    pub fn stage_names(&self) -> Vec<&str> {
        self.provenance.iter().map(|s| s.name.as_str()).collect()
    }
}

enum RawFormat {
    JsonLines,
    Csv,
}

fn sniff_format(path: &Path, first_line: &str) -> RawFormat {
    let ext = path
        .extension()
        .and_then(|e| e.to_str())
        .map(str::to_ascii_lowercase);
    match ext.as_deref() {
        Some("csv") => RawFormat::Csv,
        Some("jsonl") | Some("json") | Some("ndjson") => RawFormat::JsonLines,
        _ if first_line.trim_start().starts_with('{') => RawFormat::JsonLines,
        _ => RawFormat::Csv,
    }
}

/// Parses records without filtering. Returns `(records, line count)`; lines
/// that fail to parse or validate are counted but skipped.
pub fn read_records(path: &Path) -> Result<(Vec<AisRecord>, usize)> {
    let unreadable = |source| Error::FileUnreadable {
        path: path.to_path_buf(),
        source,
    };
    let file = File::open(path).map_err(unreadable)?;
    let mut reader = BufReader::new(file);
    let mut first = String::new();
    reader.read_line(&mut first).map_err(unreadable)?;
    let mut records = Vec::new();
    let mut lines = 0usize;
    match sniff_format(path, &first) {
        RawFormat::JsonLines => {
            let rest = reader.lines();
            for line in std::iter::once(Ok(first)).chain(rest) {
                let line = line.map_err(unreadable)?;
                if line.trim().is_empty() {
                    continue;
                }
                lines += 1;
                match serde_json::from_str::<AisRecord>(&line) {
                    Ok(r) => match validate_record(r) {
                        Ok(r) => records.push(r),
                        Err(why) => log::debug!("rejected record: {why:?}"),
                    },
                    Err(e) => log::debug!("unparseable line {lines}: {e}"),
                }
            }
        }
        RawFormat::Csv => {
            let mut csv = csv::ReaderBuilder::new()
                .has_headers(true)
                .flexible(true)
                .from_reader(std::io::Cursor::new(first).chain(reader));
            for row in csv.deserialize::<AisRecord>() {
                lines += 1;
                match row {
                    Ok(r) => {
                        if let Ok(r) = validate_record(r) {
                            records.push(r);
                        }
                    }
                    Err(e) => log::debug!("unparseable csv row {lines}: {e}"),
                }
            }
        }
    }
    Ok((records, lines))
}

/// Loads a raw JSON Lines or CSV file and keeps records inside the ROI and
/// the `[poi_start, poi_end)` window.
pub fn load_raw(path: &Path, config: &PortConfig) -> Result<Dataset> {
    let (records, lines) = read_records(path)?;
    filter_raw(records, lines, config)
}

/// ROI, POI and duplicate filtering of already parsed records.
pub fn filter_raw(records: Vec<AisRecord>, lines: usize, config: &PortConfig) -> Result<Dataset> {
    let mut provenance = vec![Stage {
        name: "parse".into(),
        before: lines,
        after: records.len(),
    }];
    let parsed = records.len();
    let in_roi: Vec<AisRecord> = records
        .into_iter()
        .filter(|r| point_in_roi(r.position, &config.roi))
        .collect();
    provenance.push(Stage {
        name: "roi".into(),
        before: parsed,
        after: in_roi.len(),
    });
    let roi_count = in_roi.len();
    let in_poi: Vec<AisRecord> = in_roi
        .into_iter()
        .filter(|r| r.timestamp >= config.poi_start && r.timestamp < config.poi_end)
        .collect();
    provenance.push(Stage {
        name: "poi".into(),
        before: roi_count,
        after: in_poi.len(),
    });
    let poi_count = in_poi.len();
    let mut d = Dataset::from_records(config.clone(), in_poi, provenance);
    d.push_stage("dedup", poi_count);
    if d.is_empty() {
        return Err(Error::empty("ingest"));
    }
    Ok(d)
}

const DATASET_FORMAT: &str = "berthfinder-dataset";
const DATASET_SCHEMA: u32 = 1;

#[derive(Serialize, Deserialize)]
struct DatasetHeader {
    format: String,
    schema_version: u32,
    port: PortConfig,
    provenance: Vec<Stage>,
    record_count: usize,
}

/// Writes a header line followed by one record per line.
pub fn save_dataset(d: &Dataset, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    let header = DatasetHeader {
        format: DATASET_FORMAT.into(),
        schema_version: DATASET_SCHEMA,
        port: d.port.clone(),
        provenance: d.provenance.clone(),
        record_count: d.record_count(),
    };
    serde_json::to_writer(&mut w, &header).map_err(std::io::Error::from)?;
    w.write_all(b"\n")?;
    for r in d.records() {
        serde_json::to_writer(&mut w, r).map_err(std::io::Error::from)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn load_dataset(path: &Path) -> Result<Dataset> {
    let file = File::open(path).map_err(|source| Error::FileUnreadable {
        path: path.to_path_buf(),
        source,
    })?;
    let mut lines = BufReader::new(file).lines();
    let corrupt = |m: String| Error::SchemaVersionMismatch(format!("{}: {m}", path.display()));
    let header_line = lines
        .next()
        .transpose()?
        .ok_or_else(|| corrupt("missing header".into()))?;
    let header: DatasetHeader =
        serde_json::from_str(&header_line).map_err(|e| corrupt(format!("bad header: {e}")))?;
    if header.format != DATASET_FORMAT || header.schema_version != DATASET_SCHEMA {
        return Err(corrupt(format!(
            "format {} v{} (expected {DATASET_FORMAT} v{DATASET_SCHEMA})",
            header.format, header.schema_version
        )));
    }
    let mut tracks: Vec<VesselTrack> = Vec::new();
    let mut count = 0usize;
    for line in lines {
        let line = line?;
        if line.is_empty() {
            continue;
        }
        let r: AisRecord =
            serde_json::from_str(&line).map_err(|e| corrupt(format!("bad record: {e}")))?;
        count += 1;
        match tracks.last_mut() {
            Some(t) if t.mmsi == r.mmsi => t.records.push(r),
            _ => tracks.push(VesselTrack {
                mmsi: r.mmsi,
                records: vec![r],
            }),
        }
    }
    if count != header.record_count {
        return Err(corrupt(format!(
            "header promises {} records, found {count}",
            header.record_count
        )));
    }
    Ok(Dataset {
        port: header.port,
        tracks,
        provenance: header.provenance,
    })
}
