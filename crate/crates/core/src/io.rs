//! Plain-text files for logs, trajectories, metrics and detector verdicts.
//!
//! Every stream file starts with a `# mecanum-vio <kind> v<N>` line followed by
//! a comma-separated column header. Floats are written in Rust's shortest
//! round-trip form, so a log read back is bit-identical to the one written.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use nalgebra::{Quaternion, UnitQuaternion, Vector2, Vector3};

use crate::harness::{KeyframeRecord, RunMetrics, StepResponse, TrajectoryPoint};
use crate::kinematics::WheelSpeeds;
use crate::math::Pose;
use crate::simworld::{
    CameraFrame, FeatureObservation, GroundTruth, ImuSample, MotionSummary, ScenarioConfig,
    SensorLog, WheelContact, WheelOdomSample,
};
use crate::{Error, Result};

pub const FORMAT_VERSION: u32 = 1;

const IMU_COLUMNS: &str = "t,gx,gy,gz,ax,ay,az";
const WHEEL_COLUMNS: &str = "t,v1,v2,v3,v4";
const FRAME_COLUMNS: &str = "t,frame_id";
const FEATURE_COLUMNS: &str = "frame_id,feature_id,u,v";
const TRUTH_COLUMNS: &str =
    "t,px,py,pz,qw,qx,qy,qz,vx,vy,vz,wx,wy,wz,ax,ay,az,s1,s2,s3,s4,c1,c2,c3,c4";
const TRAJECTORY_COLUMNS: &str = "t,px,py,pz,qw,qx,qy,qz";
const VERDICT_COLUMNS: &str = "t_start,t_end,d1,d1_stat,d1_threshold,d2,d2_stat,d2_threshold,d3,d3_stat,d3_threshold,fused,gated";
const STEP_COLUMNS: &str = "t,vx_set,vy_set,omega_set,vx,vy,omega,constraint_error,slipping";

fn header(kind: &str, columns: &str) -> String {
    format!("# mecanum-vio {kind} v{FORMAT_VERSION}\n{columns}\n")
}

fn join(values: &[f64]) -> String {
    let mut s = String::new();
    for (i, v) in values.iter().enumerate() {
        if i > 0 {
            s.push(',');
        }
        write!(s, "{v}").expect("writing to a String");
    }
    s
}

fn pose_fields(p: &Pose) -> [f64; 7] {
    let q = p.rotation.quaternion();
    let t = p.translation;
    [t.x, t.y, t.z, q.w, q.i, q.j, q.k]
}

/// Rows of a stream file after its version and column lines are checked.
struct Table<'a> {
    file: String,
    rows: Vec<(usize, Vec<&'a str>)>,
}

impl<'a> Table<'a> {
    fn parse(file: &str, text: &'a str, kind: &str, columns: &str) -> Result<Self> {
        let err = |line, reason: String| Error::Parse {
            file: file.into(),
            line,
            reason,
        };
        let mut lines = text.lines().enumerate();
        let version_line = format!("# mecanum-vio {kind} v{FORMAT_VERSION}");
        match lines.next() {
            Some((_, l)) if l.trim() == version_line => {}
            Some((_, l)) => return Err(err(1, format!("expected `{version_line}`, found `{l}`"))),
            None => return Err(err(1, "empty file".into())),
        }
        match lines.next() {
            Some((_, l)) if l.trim() == columns => {}
            _ => return Err(err(2, format!("expected column header `{columns}`"))),
        }
        let width = columns.split(',').count();
        let mut rows = Vec::new();
        for (i, l) in lines {
            if l.trim().is_empty() {
                continue;
            }
            let cells: Vec<&str> = l.split(',').map(str::trim).collect();
            if cells.len() != width {
                return Err(err(
                    i + 1,
                    format!("expected {width} fields, found {}", cells.len()),
                ));
            }
            rows.push((i + 1, cells));
        }
        Ok(Self {
            file: file.into(),
            rows,
        })
    }

    fn num<T: std::str::FromStr>(&self, line: usize, cell: &str) -> Result<T> {
        cell.parse().map_err(|_| Error::Parse {
            file: self.file.clone(),
            line,
            reason: format!("cannot parse `{cell}`"),
        })
    }

    fn floats<const N: usize>(&self, line: usize, cells: &[&str]) -> Result<[f64; N]> {
        let mut out = [0.0; N];
        for (o, c) in out.iter_mut().zip(cells) {
            *o = self.num(line, c)?;
        }
        Ok(out)
    }
}

fn read(dir: &Path, name: &str) -> Result<(String, String)> {
    let path = dir.join(name);
    Ok((path.display().to_string(), fs::read_to_string(&path)?))
}

/// Write every stream of a log plus its scenario and motion summary into `dir`.
pub fn write_log(dir: &Path, log: &SensorLog) -> Result<()> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join("scenario.toml"), log.config.to_toml())?;

    let mut s = header("imu", IMU_COLUMNS);
    for m in &log.imu {
        let (g, a) = (m.gyro, m.accel);
        s += &join(&[m.t, g.x, g.y, g.z, a.x, a.y, a.z]);
        s.push('\n');
    }
    fs::write(dir.join("imu.csv"), s)?;

    let mut s = header("wheels", WHEEL_COLUMNS);
    for w in &log.wheels {
        let v = w.speeds.to_array();
        s += &join(&[w.t, v[0], v[1], v[2], v[3]]);
        s.push('\n');
    }
    fs::write(dir.join("wheels.csv"), s)?;

    let mut frames = header("frames", FRAME_COLUMNS);
    let mut features = header("features", FEATURE_COLUMNS);
    for f in &log.frames {
        writeln!(frames, "{},{}", f.t, f.frame_id).expect("writing to a String");
        for o in &f.observations {
            writeln!(
                features,
                "{},{},{},{}",
                o.frame_id, o.feature_id, o.uv.x, o.uv.y
            )
            .expect("writing to a String");
        }
    }
    fs::write(dir.join("frames.csv"), frames)?;
    fs::write(dir.join("features.csv"), features)?;

    let mut s = header("ground-truth", TRUTH_COLUMNS);
    for g in &log.ground_truth {
        let [px, py, pz, qw, qx, qy, qz] = pose_fields(&Pose::new(g.orientation, g.position));
        let (v, w, a) = (g.velocity, g.angular_velocity, g.acceleration);
        let spin = g.wheel_spin.to_array();
        let contact = g.wheel_contact.map(|c| f64::from(c.code()));
        let mut row = vec![
            g.t, px, py, pz, qw, qx, qy, qz, v.x, v.y, v.z, w.x, w.y, w.z, a.x, a.y, a.z,
        ];
        row.extend(spin);
        row.extend(contact);
        s += &join(&row);
        s.push('\n');
    }
    fs::write(dir.join("ground_truth.csv"), s)?;

    fs::write(dir.join("summary.txt"), summary_text(&log.summary))?;
    Ok(())
}

fn summary_text(m: &MotionSummary) -> String {
    let mut s = format!("# mecanum-vio summary v{FORMAT_VERSION}\n");
    for (k, v) in [
        ("abnormal_duration", m.abnormal_duration),
        ("run_time", m.run_time),
        ("average_speed", m.average_speed),
        ("max_speed", m.max_speed),
        ("displacement", m.displacement),
        ("accumulated_angle", m.accumulated_angle),
    ] {
        writeln!(s, "{k}={v}").expect("writing to a String");
    }
    s
}

/// Read a log written by [`write_log`]. The motion summary is recomputed from
/// the ground truth.
pub fn read_log(dir: &Path) -> Result<SensorLog> {
    let (file, text) = read(dir, "scenario.toml")?;
    let config = ScenarioConfig::from_toml(&text).map_err(|e| Error::Parse {
        file,
        line: 0,
        reason: e.to_string(),
    })?;

    let (file, text) = read(dir, "imu.csv")?;
    let table = Table::parse(&file, &text, "imu", IMU_COLUMNS)?;
    let imu = table
        .rows
        .iter()
        .map(|(line, c)| {
            let [t, gx, gy, gz, ax, ay, az] = table.floats::<7>(*line, c)?;
            Ok(ImuSample {
                t,
                gyro: Vector3::new(gx, gy, gz),
                accel: Vector3::new(ax, ay, az),
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let (file, text) = read(dir, "wheels.csv")?;
    let table = Table::parse(&file, &text, "wheels", WHEEL_COLUMNS)?;
    let wheels = table
        .rows
        .iter()
        .map(|(line, c)| {
            let [t, a, b, cc, d] = table.floats::<5>(*line, c)?;
            Ok(WheelOdomSample {
                t,
                speeds: WheelSpeeds::from_array([a, b, cc, d]),
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let (file, text) = read(dir, "frames.csv")?;
    let table = Table::parse(&file, &text, "frames", FRAME_COLUMNS)?;
    let mut frames = table
        .rows
        .iter()
        .map(|(line, c)| {
            Ok(CameraFrame {
                t: table.num(*line, c[0])?,
                frame_id: table.num(*line, c[1])?,
                observations: Vec::new(),
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let (file, text) = read(dir, "features.csv")?;
    let table = Table::parse(&file, &text, "features", FEATURE_COLUMNS)?;
    for (line, c) in &table.rows {
        let frame_id: u64 = table.num(*line, c[0])?;
        let obs = FeatureObservation {
            frame_id,
            feature_id: table.num(*line, c[1])?,
            uv: Vector2::new(table.num(*line, c[2])?, table.num(*line, c[3])?),
        };
        let frame = frames
            .iter_mut()
            .find(|f| f.frame_id == frame_id)
            .ok_or_else(|| Error::Parse {
                file: file.clone(),
                line: *line,
                reason: format!("unknown frame {frame_id}"),
            })?;
        frame.observations.push(obs);
    }

    let (file, text) = read(dir, "ground_truth.csv")?;
    let table = Table::parse(&file, &text, "ground-truth", TRUTH_COLUMNS)?;
    let ground_truth = table
        .rows
        .iter()
        .map(|(line, c)| {
            let f = table.floats::<21>(*line, c)?;
            let mut contact = [WheelContact::Grounded; 4];
            for (k, slot) in contact.iter_mut().enumerate() {
                let code: u8 = table.num(*line, c[21 + k])?;
                *slot = WheelContact::from_code(code).ok_or_else(|| Error::Parse {
                    file: file.clone(),
                    line: *line,
                    reason: format!("bad contact code {code}"),
                })?;
            }
            Ok(GroundTruth {
                t: f[0],
                position: Vector3::new(f[1], f[2], f[3]),
                orientation: UnitQuaternion::new_unchecked(Quaternion::new(f[4], f[5], f[6], f[7])),
                velocity: Vector3::new(f[8], f[9], f[10]),
                angular_velocity: Vector3::new(f[11], f[12], f[13]),
                acceleration: Vector3::new(f[14], f[15], f[16]),
                wheel_spin: WheelSpeeds::from_array([f[17], f[18], f[19], f[20]]),
                wheel_contact: contact,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let summary = MotionSummary::from_truth(&ground_truth, config.abnormal_duration());
    Ok(SensorLog {
        config,
        imu,
        wheels,
        frames,
        ground_truth,
        summary,
    })
}

pub fn trajectory_text(points: &[TrajectoryPoint]) -> String {
    let mut s = header("trajectory", TRAJECTORY_COLUMNS);
    for p in points {
        let mut row = vec![p.t];
        row.extend(pose_fields(&p.pose));
        s += &join(&row);
        s.push('\n');
    }
    s
}

pub fn write_trajectory(path: &Path, points: &[TrajectoryPoint]) -> Result<()> {
    Ok(fs::write(path, trajectory_text(points))?)
}

pub fn read_trajectory(path: &Path) -> Result<Vec<TrajectoryPoint>> {
    let text = fs::read_to_string(path)?;
    let file = path.display().to_string();
    let table = Table::parse(&file, &text, "trajectory", TRAJECTORY_COLUMNS)?;
    table
        .rows
        .iter()
        .map(|(line, c)| {
            let [t, px, py, pz, qw, qx, qy, qz] = table.floats::<8>(*line, c)?;
            let q = UnitQuaternion::new_normalize(Quaternion::new(qw, qx, qy, qz));
            Ok(TrajectoryPoint {
                t,
                pose: Pose::new(q, Vector3::new(px, py, pz)),
            })
        })
        .collect()
}

/// `key=value` lines named after the [`RunMetrics`] fields.
pub fn metrics_text(m: &RunMetrics) -> String {
    let mut s = String::new();
    for (k, v) in m.fields() {
        writeln!(s, "{k}={v}").expect("writing to a String");
    }
    s
}

pub fn write_metrics(path: &Path, m: &RunMetrics) -> Result<()> {
    Ok(fs::write(path, metrics_text(m))?)
}

pub fn parse_metrics(file: &str, text: &str) -> Result<RunMetrics> {
    let mut m = RunMetrics::default();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let err = |reason: String| Error::Parse {
            file: file.into(),
            line: i + 1,
            reason,
        };
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| err("expected key=value".into()))?;
        let x: f64 = v
            .trim()
            .parse()
            .map_err(|_| err(format!("cannot parse `{v}`")))?;
        let count = || x as usize;
        match k.trim() {
            "position_error" => m.position_error = x,
            "position_error_rate" => m.position_error_rate = x,
            "heading_error" => m.heading_error = x,
            "ate_rmse" => m.ate_rmse = x,
            "run_time" => m.run_time = x,
            "average_speed" => m.average_speed = x,
            "max_speed" => m.max_speed = x,
            "displacement" => m.displacement = x,
            "accumulated_angle" => m.accumulated_angle = x,
            "abnormal_duration" => m.abnormal_duration = x,
            "keyframes" => m.keyframes = count(),
            "d1_count" => m.d1_count = count(),
            "d2_count" => m.d2_count = count(),
            "d3_count" => m.d3_count = count(),
            "gated_count" => m.gated_count = count(),
            other => return Err(err(format!("unknown key `{other}`"))),
        }
    }
    Ok(m)
}

/// One row per keyframe interval with each detector's flag, statistic and threshold.
pub fn verdicts_text(records: &[KeyframeRecord]) -> String {
    let mut s = header("verdicts", VERDICT_COLUMNS);
    for r in records {
        let Some(v) = r.verdict else { continue };
        write!(s, "{},{}", r.t_prev, r.t).expect("writing to a String");
        for d in [v.d1, v.d2, v.d3] {
            write!(s, ",{},{},{}", d.flag.as_str(), d.statistic, d.threshold)
                .expect("writing to a String");
        }
        writeln!(s, ",{},{}", v.fused, r.gated).expect("writing to a String");
    }
    s
}

pub fn step_response_text(resp: &StepResponse) -> String {
    let mut s = header("step-response", STEP_COLUMNS);
    for p in &resp.samples {
        let row = [
            p.t,
            p.setpoint.vx,
            p.setpoint.vy,
            p.setpoint.omega,
            p.measured.vx,
            p.measured.vy,
            p.measured.omega,
            p.constraint_error,
        ];
        writeln!(s, "{},{}", join(&row), u8::from(p.slipping)).expect("writing to a String");
    }
    s
}
