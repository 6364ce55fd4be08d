//! On-disk CSV formats for datasets, ground truth, estimates, and
//! parameter traces.
//!
//! All floating-point values are serialized with 17 significant digits so a
//! write/read round trip reproduces every `f64` bit-exactly. Leg columns are
//! suffixed `fl`, `fr`, `rl`, `rr` in that order.

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::Vector3;

use crate::error::{Error, Result};
use crate::sim::{Dataset, GroundTruth, GroundTruthFrame};
use crate::types::{LegId, LegSensors, Quat, RobotState, SensorFrame, NUM_LEGS};

fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

fn parse_f64(field: &str, row: usize, col: &str) -> Result<f64> {
    field.trim().parse::<f64>().map_err(|_| {
        Error::Schema(format!("row {row}: column `{col}` is not a number: `{field}`"))
    })
}

/// Header of `sensors.csv`.
pub fn sensors_header() -> Vec<String> {
    let mut h = vec!["t", "wx", "wy", "wz", "ax", "ay", "az"]
        .into_iter()
        .map(String::from)
        .collect::<Vec<_>>();
    for leg in LegId::ALL {
        let tag = leg.tag();
        for k in 1..=3 {
            h.push(format!("q{tag}{k}"));
        }
        for k in 1..=3 {
            h.push(format!("dq{tag}{k}"));
        }
        for k in 1..=3 {
            h.push(format!("tau{tag}{k}"));
        }
        h.push(format!("fz{tag}"));
        h.push(format!("contact{tag}"));
    }
    h
}

/// Header of `truth.csv`.
pub fn truth_header() -> Vec<String> {
    let mut h = vec![
        "t", "px", "py", "pz", "vx", "vy", "vz", "qw", "qx", "qy", "qz",
    ]
    .into_iter()
    .map(String::from)
    .collect::<Vec<_>>();
    for leg in LegId::ALL {
        let tag = leg.tag();
        for axis in ["x", "y", "z"] {
            h.push(format!("s{tag}{axis}"));
        }
        for axis in ["x", "y", "z"] {
            h.push(format!("sd{tag}{axis}"));
        }
    }
    h
}

/// Header of `estimate_<variant>.csv`.
pub fn estimate_header() -> Vec<String> {
    let mut h = vec![
        "t", "px", "py", "pz", "vx", "vy", "vz", "qw", "qx", "qy", "qz",
    ]
    .into_iter()
    .map(String::from)
    .collect::<Vec<_>>();
    for leg in LegId::ALL {
        let tag = leg.tag();
        for axis in ["x", "y", "z"] {
            h.push(format!("s{tag}{axis}"));
        }
    }
    for name in ["bgx", "bgy", "bgz", "bax", "bay", "baz"] {
        h.push(name.to_string());
    }
    h
}

/// Header of the parameter-trace files.
pub const PARAMS_HEADER: &str = "t,lc_fl,lc_fr,lc_rl,lc_rr";

fn push_vec3(out: &mut Vec<String>, v: &Vector3<f64>) {
    out.push(fmt_f64(v.x));
    out.push(fmt_f64(v.y));
    out.push(fmt_f64(v.z));
}

/// Serializes a dataset to `sensors.csv`.
pub fn write_sensors_csv(path: &Path, dataset: &Dataset) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(sensors_header())?;
    for frame in &dataset.frames {
        let mut rec: Vec<String> = Vec::with_capacity(7 + NUM_LEGS * 11);
        rec.push(fmt_f64(frame.time));
        push_vec3(&mut rec, &frame.gyro);
        push_vec3(&mut rec, &frame.accel);
        for leg in &frame.legs {
            push_vec3(&mut rec, &leg.joint_angles);
            push_vec3(&mut rec, &leg.joint_velocities);
            push_vec3(&mut rec, &leg.joint_torques);
            rec.push(fmt_f64(leg.normal_force));
            rec.push(if leg.contact { "1" } else { "0" }.to_string());
        }
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

fn check_header(expected: &[String], actual: &csv::StringRecord, file: &str) -> Result<()> {
    for (k, name) in expected.iter().enumerate() {
        match actual.get(k) {
            Some(field) if field == name => {}
            _ => {
                return Err(Error::Schema(format!(
                    "{file}: missing or misplaced column `{name}`"
                )))
            }
        }
    }
    if actual.len() != expected.len() {
        return Err(Error::Schema(format!(
            "{file}: expected {} columns, found {}",
            expected.len(),
            actual.len()
        )));
    }
    Ok(())
}

/// Reads a dataset back from `sensors.csv`.
pub fn read_sensors_csv(path: &Path) -> Result<Dataset> {
    let mut r = csv::ReaderBuilder::new().has_headers(true).from_path(path)?;
    let header = sensors_header();
    check_header(&header, r.headers()?, "sensors.csv")?;
    let mut frames = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec?;
        let row = i + 2; // 1-based, after the header line
        if rec.len() != header.len() {
            return Err(Error::Schema(format!(
                "sensors.csv row {row}: expected {} fields, found {}",
                header.len(),
                rec.len()
            )));
        }
        let get = |k: usize| parse_f64(rec.get(k).unwrap_or(""), row, &header[k]);
        let time = get(0)?;
        let gyro = Vector3::new(get(1)?, get(2)?, get(3)?);
        let accel = Vector3::new(get(4)?, get(5)?, get(6)?);
        let mut legs = [LegSensors::zeroed(); NUM_LEGS];
        for (i, leg) in legs.iter_mut().enumerate() {
            let base = 7 + 11 * i;
            let ja = Vector3::new(get(base)?, get(base + 1)?, get(base + 2)?);
            let jv = Vector3::new(get(base + 3)?, get(base + 4)?, get(base + 5)?);
            let tq = Vector3::new(get(base + 6)?, get(base + 7)?, get(base + 8)?);
            let fz = get(base + 9)?;
            let contact = match rec.get(base + 10).unwrap_or("").trim() {
                "1" => true,
                "0" => false,
                other => {
                    return Err(Error::Schema(format!(
                        "sensors.csv row {row}: contact flag must be 0 or 1, got `{other}`"
                    )))
                }
            };
            *leg = LegSensors {
                joint_angles: ja,
                joint_velocities: jv,
                joint_torques: tq,
                normal_force: fz,
                contact,
            };
        }
        frames.push(SensorFrame {
            time,
            gyro,
            accel,
            legs,
        });
    }
    Ok(Dataset { frames })
}

/// Serializes ground truth to `truth.csv`.
pub fn write_truth_csv(path: &Path, truth: &GroundTruth) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(truth_header())?;
    for f in &truth.frames {
        let mut rec: Vec<String> = Vec::with_capacity(11 + NUM_LEGS * 6);
        rec.push(fmt_f64(f.time));
        push_vec3(&mut rec, &f.state.position);
        push_vec3(&mut rec, &f.state.velocity);
        rec.push(fmt_f64(f.state.orientation.w));
        rec.push(fmt_f64(f.state.orientation.x));
        rec.push(fmt_f64(f.state.orientation.y));
        rec.push(fmt_f64(f.state.orientation.z));
        for i in 0..NUM_LEGS {
            push_vec3(&mut rec, &f.state.foot_positions[i]);
        }
        for i in 0..NUM_LEGS {
            push_vec3(&mut rec, &f.slip_velocities[i]);
        }
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// Reads `truth.csv`. Fields not stored in the file (forces, stance flags,
/// calf lengths, biases) come back zeroed; the trajectory, orientation,
/// foot, and slip series are exact.
pub fn read_truth_csv(path: &Path) -> Result<GroundTruth> {
    let mut r = csv::ReaderBuilder::new().has_headers(true).from_path(path)?;
    let header = truth_header();
    check_header(&header, r.headers()?, "truth.csv")?;
    let mut frames = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec?;
        let row = i + 2;
        if rec.len() != header.len() {
            return Err(Error::Schema(format!(
                "truth.csv row {row}: expected {} fields, found {}",
                header.len(),
                rec.len()
            )));
        }
        let get = |k: usize| parse_f64(rec.get(k).unwrap_or(""), row, &header[k]);
        let mut state = RobotState::zeroed();
        let time = get(0)?;
        state.position = Vector3::new(get(1)?, get(2)?, get(3)?);
        state.velocity = Vector3::new(get(4)?, get(5)?, get(6)?);
        state.orientation = Quat::new(get(7)?, get(8)?, get(9)?, get(10)?);
        let mut slip = [Vector3::zeros(); NUM_LEGS];
        for leg in 0..NUM_LEGS {
            let base = 11 + 3 * leg;
            state.foot_positions[leg] = Vector3::new(get(base)?, get(base + 1)?, get(base + 2)?);
            let sbase = 11 + 3 * NUM_LEGS + 3 * leg;
            slip[leg] = Vector3::new(get(sbase)?, get(sbase + 1)?, get(sbase + 2)?);
        }
        frames.push(GroundTruthFrame {
            time,
            state,
            calf_lengths: [0.0; NUM_LEGS],
            slip_velocities: slip,
            grf: [Vector3::zeros(); NUM_LEGS],
            stance: [false; NUM_LEGS],
        });
    }
    Ok(GroundTruth { frames })
}

/// Writes a parameter trace (`params_truth.csv` or `params_<variant>.csv`).
pub fn write_params_csv(path: &Path, rows: &[(f64, [f64; NUM_LEGS])]) -> Result<()> {
    let mut out = String::new();
    out.push_str(PARAMS_HEADER);
    out.push('\n');
    for (t, lc) in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{}",
            fmt_f64(*t),
            fmt_f64(lc[0]),
            fmt_f64(lc[1]),
            fmt_f64(lc[2]),
            fmt_f64(lc[3])
        );
    }
    std::fs::write(path, out)?;
    Ok(())
}

/// Reads a parameter trace.
pub fn read_params_csv(path: &Path) -> Result<Vec<(f64, [f64; NUM_LEGS])>> {
    let text = std::fs::read_to_string(path)?;
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, header)) if header == PARAMS_HEADER => {}
        _ => {
            return Err(Error::Schema(format!(
                "{}: expected header `{PARAMS_HEADER}`",
                path.display()
            )))
        }
    }
    let mut rows = Vec::new();
    for (i, line) in lines {
        if line.is_empty() {
            continue;
        }
        let row = i + 1;
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 5 {
            return Err(Error::Schema(format!(
                "params row {row}: expected 5 fields, found {}",
                fields.len()
            )));
        }
        let t = parse_f64(fields[0], row, "t")?;
        let mut lc = [0.0; NUM_LEGS];
        for (k, leg) in LegId::ALL.iter().enumerate() {
            lc[k] = parse_f64(fields[k + 1], row, &format!("lc_{}", leg.tag()))?;
        }
        rows.push((t, lc));
    }
    Ok(rows)
}

/// Writes an estimate trajectory (`estimate_<variant>.csv`).
pub fn write_estimate_csv(
    path: &Path,
    records: &[(f64, RobotState)],
) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(estimate_header())?;
    for (t, state) in records {
        let mut rec: Vec<String> = Vec::with_capacity(11 + NUM_LEGS * 3 + 6);
        rec.push(fmt_f64(*t));
        push_vec3(&mut rec, &state.position);
        push_vec3(&mut rec, &state.velocity);
        rec.push(fmt_f64(state.orientation.w));
        rec.push(fmt_f64(state.orientation.x));
        rec.push(fmt_f64(state.orientation.y));
        rec.push(fmt_f64(state.orientation.z));
        for i in 0..NUM_LEGS {
            push_vec3(&mut rec, &state.foot_positions[i]);
        }
        push_vec3(&mut rec, &state.gyro_bias);
        push_vec3(&mut rec, &state.accel_bias);
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// Reads an estimate trajectory.
pub fn read_estimate_csv(path: &Path) -> Result<Vec<(f64, RobotState)>> {
    let mut r = csv::ReaderBuilder::new().has_headers(true).from_path(path)?;
    let header = estimate_header();
    check_header(&header, r.headers()?, "estimate csv")?;
    let mut out = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec?;
        let row = i + 2;
        if rec.len() != header.len() {
            return Err(Error::Schema(format!(
                "estimate csv row {row}: expected {} fields, found {}",
                header.len(),
                rec.len()
            )));
        }
        let get = |k: usize| parse_f64(rec.get(k).unwrap_or(""), row, &header[k]);
        let mut state = RobotState::zeroed();
        let t = get(0)?;
        state.position = Vector3::new(get(1)?, get(2)?, get(3)?);
        state.velocity = Vector3::new(get(4)?, get(5)?, get(6)?);
        state.orientation = Quat::new(get(7)?, get(8)?, get(9)?, get(10)?);
        for leg in 0..NUM_LEGS {
            let base = 11 + 3 * leg;
            state.foot_positions[leg] = Vector3::new(get(base)?, get(base + 1)?, get(base + 2)?);
        }
        let b = 11 + 3 * NUM_LEGS;
        state.gyro_bias = Vector3::new(get(b)?, get(b + 1)?, get(b + 2)?);
        state.accel_bias = Vector3::new(get(b + 3)?, get(b + 4)?, get(b + 5)?);
        out.push((t, state));
    }
    Ok(out)
}
