//! Per-step simulation records and their CSV form.

use std::io::{Read, Write};
use std::path::Path;

use nalgebra::Vector3;

use crate::planner::StrokeDirection;

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct EndpointSample {
    pub x: Vector3<f64>,
    pub x_des: Vector3<f64>,
    /// `x_des − x`
    pub e: Vector3<f64>,
    pub f_ctrl: Vector3<f64>,
    pub f_couple: Vector3<f64>,
    pub f_fric: Vector3<f64>,
    pub f_contact: Vector3<f64>,
    /// diagonal of the applied stiffness
    pub k_diag: Vector3<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepRecord {
    pub t: f64,
    /// completed strokes of each endpoint's stroke machine
    pub stroke: [u64; 2],
    pub direction: [StrokeDirection; 2],
    pub endpoints: [EndpointSample; 2],
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimLog {
    pub dt: f64,
    pub period: f64,
    pub phase_offset: f64,
    pub records: Vec<StepRecord>,
}

/// Column names per endpoint: position, desired position, error, control
/// force, coupling force, friction, wood contact, stiffness diagonal.
const BLOCKS: [[&str; 3]; 8] = [
    ["x", "y", "z"],
    ["xd", "yd", "zd"],
    ["ex", "ey", "ez"],
    ["fx", "fy", "fz"],
    ["fcx", "fcy", "fcz"],
    ["ffx", "ffy", "ffz"],
    ["fnx", "fny", "fnz"],
    ["kxx", "kyy", "kzz"],
];

impl SimLog {
    pub fn new(dt: f64, period: f64, phase_offset: f64) -> Self {
        Self {
            dt,
            period,
            phase_offset,
            records: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn header() -> Vec<String> {
        let mut h = vec!["t".to_owned(), "phase_a".to_owned(), "phase_b".to_owned()];
        for p in ["a", "b"] {
            for names in BLOCKS {
                h.extend(names.iter().map(|n| format!("{p}_{n}")));
            }
        }
        h
    }

    pub fn write_csv<W: Write>(&self, w: W) -> csv::Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(Self::header())?;
        let mut row: Vec<String> = Vec::with_capacity(3 + 48);
        for r in &self.records {
            row.clear();
            row.push(r.t.to_string());
            // phase = stroke index; even strokes run forward
            row.push(r.stroke[0].to_string());
            row.push(r.stroke[1].to_string());
            for s in &r.endpoints {
                for v in [s.x, s.x_des, s.e, s.f_ctrl, s.f_couple, s.f_fric, s.f_contact, s.k_diag] {
                    row.extend(v.iter().map(|c| c.to_string()));
                }
            }
            out.write_record(&row)?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn save_csv(&self, path: &Path) -> std::io::Result<()> {
        let file = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.write_csv(file).map_err(std::io::Error::other)
    }

    /// Reads a log written by [`SimLog::write_csv`]. The time step is taken
    /// from the first two rows unless the log has a single row.
    pub fn read_csv<R: Read>(r: R, period: f64, phase_offset: f64, dt: f64) -> Result<Self, String> {
        let mut rdr = csv::Reader::from_reader(r);
        let header = rdr.headers().map_err(|e| e.to_string())?.clone();
        let expected = Self::header();
        if header.len() != expected.len() || header.iter().zip(&expected).any(|(a, b)| a != b) {
            return Err("unexpected simulation log header".into());
        }
        let mut log = Self::new(dt, period, phase_offset);
        for (line, rec) in rdr.records().enumerate() {
            let rec = rec.map_err(|e| e.to_string())?;
            let bad = |c: usize| format!("row {}: bad value in column {}", line + 1, expected[c]);
            let num = |c: usize| rec[c].parse::<f64>().map_err(|_| bad(c));
            let stroke = |c: usize| rec[c].parse::<u64>().map_err(|_| bad(c));
            let mut endpoints = [EndpointSample::default(); 2];
            for (i, s) in endpoints.iter_mut().enumerate() {
                let base = 3 + i * 24;
                let v = |b: usize| -> Result<Vector3<f64>, String> {
                    let c = base + 3 * b;
                    Ok(Vector3::new(num(c)?, num(c + 1)?, num(c + 2)?))
                };
                *s = EndpointSample {
                    x: v(0)?,
                    x_des: v(1)?,
                    e: v(2)?,
                    f_ctrl: v(3)?,
                    f_couple: v(4)?,
                    f_fric: v(5)?,
                    f_contact: v(6)?,
                    k_diag: v(7)?,
                };
            }
            let stroke = [stroke(1)?, stroke(2)?];
            let direction = stroke.map(|n| if n % 2 == 0 { StrokeDirection::Forward } else { StrokeDirection::Backward });
            log.records.push(StepRecord {
                t: num(0)?,
                stroke,
                direction,
                endpoints,
            });
        }
        if log.records.len() >= 2 {
            log.dt = log.records[1].t - log.records[0].t;
        }
        Ok(log)
    }
}
