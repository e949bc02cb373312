//! File formats: capacity networks, flow dumps and flat record tables.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::capacities::{CapacityDistribution, CapacityNetwork, Provenance};
use crate::error::{Error, Result};
use crate::flowcore::DirectedFlow;
use crate::hypercube::{Cube, Vertex};

/// Version stamped on every JSON document written by this module.
pub const SCHEMA_VERSION: u32 = 1;

/// Output encoding.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    #[default]
    Json,
    Csv,
}

impl Format {
    /// Guess the format from a file extension.
    pub fn from_path(path: &Path) -> Option<Format> {
        match path.extension()?.to_str()?.to_ascii_lowercase().as_str() {
            "json" => Some(Format::Json),
            "csv" => Some(Format::Csv),
            _ => None,
        }
    }

    /// Guess the format from the first non-blank byte of a document.
    pub fn sniff(text: &str) -> Format {
        match text.trim_start().as_bytes().first() {
            Some(b'{') | Some(b'[') => Format::Json,
            _ => Format::Csv,
        }
    }
}

/// Rows of one record type wrapped with a schema version.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct RecordDocument<T> {
    pub schema_version: u32,
    pub rows: Vec<T>,
}

/// Write flat records as a JSON document or a CSV table with a header row.
pub fn write_records<T: Serialize, W: Write>(rows: &[T], format: Format, mut out: W) -> Result<()> {
    match format {
        Format::Json => {
            #[derive(Serialize)]
            #[serde(rename_all = "camelCase")]
            struct Borrowed<'a, T> {
                schema_version: u32,
                rows: &'a [T],
            }
            let doc = Borrowed { schema_version: SCHEMA_VERSION, rows };
            serde_json::to_writer_pretty(&mut out, &doc)?;
            writeln!(out)?;
        }
        Format::Csv => {
            let mut w = csv::Writer::from_writer(out);
            for row in rows {
                w.serialize(row)?;
            }
            w.flush()?;
        }
    }
    Ok(())
}

/// Inverse of [`write_records`].
pub fn read_records<T: DeserializeOwned>(text: &str, format: Format) -> Result<Vec<T>> {
    match format {
        Format::Json => {
            let doc: RecordDocument<T> = serde_json::from_str(text)?;
            check_schema(doc.schema_version)?;
            Ok(doc.rows)
        }
        Format::Csv => {
            let mut r = csv::Reader::from_reader(text.as_bytes());
            r.deserialize().map(|row| row.map_err(Error::from)).collect()
        }
    }
}

fn check_schema(version: u32) -> Result<()> {
    if version != SCHEMA_VERSION {
        return Err(Error::Format(format!("unsupported schemaVersion {version}, expected {SCHEMA_VERSION}")));
    }
    Ok(())
}

/// Write to `path`, or to stdout when `path` is `None`.
pub fn with_output<F>(path: Option<&Path>, body: F) -> Result<()>
where
    F: FnOnce(&mut dyn Write) -> Result<()>,
{
    match path {
        Some(p) => {
            let mut w = BufWriter::new(File::create(p)?);
            body(&mut w)?;
            w.flush()?;
        }
        None => {
            let stdout = std::io::stdout();
            let mut lock = stdout.lock();
            body(&mut lock)?;
            lock.flush()?;
        }
    }
    Ok(())
}

pub fn read_to_string(path: &Path) -> Result<String> {
    let mut s = String::new();
    BufReader::new(File::open(path)?).read_to_string(&mut s)?;
    Ok(s)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
struct NetworkDocument {
    schema_version: u32,
    d: u32,
    distribution: Option<String>,
    seed: Option<u64>,
    generator: Option<String>,
    capacities: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
struct NetworkRow {
    d: u32,
    edge_index: usize,
    lower: Vertex,
    dim: u32,
    capacity: f64,
    distribution: Option<String>,
    seed: Option<u64>,
    generator: Option<String>,
}

fn provenance_fields(net: &CapacityNetwork) -> (Option<String>, Option<u64>, Option<String>) {
    match net.provenance() {
        Some(p) => (Some(p.distribution.to_string()), Some(p.seed), Some(p.generator.clone())),
        None => (None, None, None),
    }
}

fn rebuild_network(
    d: u32,
    caps: Vec<f64>,
    distribution: Option<String>,
    seed: Option<u64>,
    generator: Option<String>,
) -> Result<CapacityNetwork> {
    let cube = Cube::new(d)?;
    let net = CapacityNetwork::from_capacities(cube, caps)?;
    let provenance = match (distribution, seed, generator) {
        (Some(dist), Some(seed), Some(generator)) => {
            Some(Provenance { distribution: dist.parse::<CapacityDistribution>()?, seed, generator })
        }
        (None, None, None) => None,
        _ => return Err(Error::Format("provenance needs distribution, seed and generator together".into())),
    };
    Ok(net.with_provenance(provenance))
}

/// Serialize a capacity network with its provenance.
pub fn write_network<W: Write>(net: &CapacityNetwork, format: Format, mut out: W) -> Result<()> {
    let cube = net.cube();
    let (distribution, seed, generator) = provenance_fields(net);
    match format {
        Format::Json => {
            let doc = NetworkDocument {
                schema_version: SCHEMA_VERSION,
                d: cube.dim(),
                distribution,
                seed,
                generator,
                capacities: net.capacities().to_vec(),
            };
            serde_json::to_writer_pretty(&mut out, &doc)?;
            writeln!(out)?;
        }
        Format::Csv => {
            let mut w = csv::Writer::from_writer(out);
            for (i, &c) in net.capacities().iter().enumerate() {
                let e = cube.edge_at(i);
                w.serialize(NetworkRow {
                    d: cube.dim(),
                    edge_index: i,
                    lower: e.lower,
                    dim: e.dim,
                    capacity: c,
                    distribution: distribution.clone(),
                    seed,
                    generator: generator.clone(),
                })?;
            }
            w.flush()?;
        }
    }
    Ok(())
}

/// Parse a network document in either format.
pub fn parse_network(text: &str) -> Result<CapacityNetwork> {
    match Format::sniff(text) {
        Format::Json => {
            let doc: NetworkDocument = serde_json::from_str(text)?;
            check_schema(doc.schema_version)?;
            rebuild_network(doc.d, doc.capacities, doc.distribution, doc.seed, doc.generator)
        }
        Format::Csv => {
            let rows: Vec<NetworkRow> = read_records(text, Format::Csv)?;
            let first = rows.first().ok_or_else(|| Error::Format("network table has no rows".into()))?;
            let cube = Cube::new(first.d)?;
            if rows.len() != cube.edge_count() {
                return Err(Error::Format(format!("expected {} edges, found {}", cube.edge_count(), rows.len())));
            }
            let mut caps = vec![f64::NAN; rows.len()];
            for r in &rows {
                if r.d != first.d || r.distribution != first.distribution || r.seed != first.seed {
                    return Err(Error::Format("rows disagree on d or provenance".into()));
                }
                if r.edge_index >= caps.len() {
                    return Err(Error::EdgeOutOfRange { index: r.edge_index, count: caps.len() });
                }
                let e = cube.edge_at(r.edge_index);
                if e.lower != r.lower || e.dim != r.dim {
                    return Err(Error::Format(format!("edge {} does not match ({}, {})", r.edge_index, r.lower, r.dim)));
                }
                caps[r.edge_index] = r.capacity;
            }
            if caps.iter().any(|c| c.is_nan()) {
                return Err(Error::Format("duplicate edge rows".into()));
            }
            rebuild_network(first.d, caps, first.distribution.clone(), first.seed, first.generator.clone())
        }
    }
}

pub fn read_network(path: &Path) -> Result<CapacityNetwork> {
    parse_network(&read_to_string(path)?)
}

/// One commodity of a flow dump.
#[derive(Clone, Debug, PartialEq)]
pub struct DumpedFlow {
    pub u: Vertex,
    pub v: Vertex,
    pub flow: DirectedFlow,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
struct FlowDocument {
    schema_version: u32,
    d: u32,
    commodities: Vec<FlowEntry>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct FlowEntry {
    u: Vertex,
    v: Vertex,
    /// Signed value per canonical edge: positive from lower to upper endpoint.
    values: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
struct FlowRow {
    d: u32,
    u: Vertex,
    v: Vertex,
    edge_index: Option<usize>,
    value: Option<f64>,
}

/// Write flows densely (JSON) or as nonzero edge rows (CSV).
pub fn write_flows<W: Write>(cube: Cube, flows: &[DumpedFlow], format: Format, mut out: W) -> Result<()> {
    match format {
        Format::Json => {
            let doc = FlowDocument {
                schema_version: SCHEMA_VERSION,
                d: cube.dim(),
                commodities: flows
                    .iter()
                    .map(|f| FlowEntry { u: f.u, v: f.v, values: f.flow.signed_values().to_vec() })
                    .collect(),
            };
            serde_json::to_writer(&mut out, &doc)?;
            writeln!(out)?;
        }
        Format::Csv => {
            let mut w = csv::Writer::from_writer(out);
            for f in flows {
                let mut any = false;
                for (i, &x) in f.flow.signed_values().iter().enumerate() {
                    if x != 0.0 {
                        any = true;
                        w.serialize(FlowRow { d: cube.dim(), u: f.u, v: f.v, edge_index: Some(i), value: Some(x) })?;
                    }
                }
                if !any {
                    w.serialize(FlowRow { d: cube.dim(), u: f.u, v: f.v, edge_index: None, value: None })?;
                }
            }
            w.flush()?;
        }
    }
    Ok(())
}

/// Parse a flow dump in either format; returns the cube and the commodities in file order.
pub fn parse_flows(text: &str) -> Result<(Cube, Vec<DumpedFlow>)> {
    match Format::sniff(text) {
        Format::Json => {
            let doc: FlowDocument = serde_json::from_str(text)?;
            check_schema(doc.schema_version)?;
            let cube = Cube::new(doc.d)?;
            let flows = doc
                .commodities
                .into_iter()
                .map(|c| Ok(DumpedFlow { u: c.u, v: c.v, flow: DirectedFlow::from_signed(cube, c.values)? }))
                .collect::<Result<Vec<_>>>()?;
            Ok((cube, flows))
        }
        Format::Csv => {
            let rows: Vec<FlowRow> = read_records(text, Format::Csv)?;
            let first = rows.first().ok_or_else(|| Error::Format("flow table has no rows".into()))?;
            let cube = Cube::new(first.d)?;
            let mut flows: Vec<DumpedFlow> = Vec::new();
            for r in rows {
                if r.d != cube.dim() {
                    return Err(Error::Format("rows disagree on d".into()));
                }
                let start = flows.last().is_none_or(|f| (f.u, f.v) != (r.u, r.v));
                if start {
                    flows.push(DumpedFlow { u: r.u, v: r.v, flow: DirectedFlow::zero(cube) });
                }
                if let (Some(i), Some(x)) = (r.edge_index, r.value) {
                    if i >= cube.edge_count() {
                        return Err(Error::EdgeOutOfRange { index: i, count: cube.edge_count() });
                    }
                    let e = cube.edge_at(i);
                    flows.last_mut().unwrap().flow.push(e.lower, e.upper(), x);
                }
            }
            Ok((cube, flows))
        }
    }
}

pub fn read_flows(path: &Path) -> Result<(Cube, Vec<DumpedFlow>)> {
    parse_flows(&read_to_string(path)?)
}
