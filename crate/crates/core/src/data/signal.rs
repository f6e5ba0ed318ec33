use ndarray::{s, Array2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Sampling rate every IMU stream is brought to before windowing.
pub const TARGET_RATE_HZ: f64 = 50.0;
/// Total channel count after assembling all four sensors.
pub const IMU_CHANNELS: usize = 12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SensorKind {
    AccBody,
    AccWrist,
    Gyro,
    Magnetometer,
}

impl SensorKind {
    /// Canonical channel order: each sensor contributes (x, y, z) in this order.
    pub const ORDER: [SensorKind; 4] = [
        SensorKind::AccBody,
        SensorKind::AccWrist,
        SensorKind::Gyro,
        SensorKind::Magnetometer,
    ];

    pub fn name(self) -> &'static str {
        match self {
            SensorKind::AccBody => "acc_body",
            SensorKind::AccWrist => "acc_wrist",
            SensorKind::Gyro => "gyro",
            SensorKind::Magnetometer => "magnetometer",
        }
    }

    /// First column of this sensor in the assembled 12-channel matrix.
    pub fn column_offset(self) -> usize {
        3 * Self::ORDER.iter().position(|&k| k == self).expect("listed")
    }
}

impl std::fmt::Display for SensorKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// A single 3-axis sensor stream.
#[derive(Debug, Clone, PartialEq)]
pub struct RawSignal {
    /// T x 3
    pub channels: Array2<f64>,
    pub rate_hz: f64,
    pub kind: SensorKind,
}

impl RawSignal {
    pub fn new(channels: Array2<f64>, rate_hz: f64, kind: SensorKind) -> Result<Self> {
        if channels.ncols() != 3 {
            return Err(Error::Shape(format!(
                "{kind} must have 3 channels, got {}",
                channels.ncols()
            )));
        }
        if channels.nrows() == 0 {
            return Err(Error::InvalidArgument(format!("{kind} signal is empty")));
        }
        if !(rate_hz > 0.0 && rate_hz.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "{kind} rate must be > 0, got {rate_hz}"
            )));
        }
        Ok(Self {
            channels,
            rate_hz,
            kind,
        })
    }

    pub fn len(&self) -> usize {
        self.channels.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.channels.nrows() == 0
    }
}

/// Downsamples by linear interpolation at the target sample times `k / target_hz`.
///
/// Output length is `floor(T * target_hz / rate_hz)`. Upsampling is rejected.
pub fn resample_signal(signal: &RawSignal, target_hz: f64) -> Result<RawSignal> {
    if !(target_hz > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "target rate must be > 0, got {target_hz}"
        )));
    }
    if signal.rate_hz < target_hz {
        return Err(Error::Upsample {
            from_hz: signal.rate_hz,
            to_hz: target_hz,
        });
    }
    if signal.rate_hz == target_hz {
        return Ok(signal.clone());
    }
    let t = signal.len();
    let ratio = signal.rate_hz / target_hz;
    let out_len = ((t as f64) * target_hz / signal.rate_hz).floor() as usize;
    let mut out = Array2::zeros((out_len, 3));
    for k in 0..out_len {
        let pos = k as f64 * ratio;
        let lo = (pos.floor() as usize).min(t - 1);
        let hi = (lo + 1).min(t - 1);
        let frac = pos - lo as f64;
        for c in 0..3 {
            let a = signal.channels[[lo, c]];
            let b = signal.channels[[hi, c]];
            out[[k, c]] = if frac == 0.0 { a } else { a + (b - a) * frac };
        }
    }
    Ok(RawSignal {
        channels: out,
        rate_hz: target_hz,
        kind: signal.kind,
    })
}

/// Concatenates one signal per sensor kind into a T_min x 12 matrix in
/// canonical order, truncating to the shortest stream.
pub fn assemble_channels(signals: &[RawSignal]) -> Result<Array2<f64>> {
    let mut slots: [Option<&RawSignal>; 4] = [None; 4];
    for sig in signals {
        let slot = &mut slots[sig.kind.column_offset() / 3];
        if slot.is_some() {
            return Err(Error::DuplicateSensor(sig.kind.to_string()));
        }
        *slot = Some(sig);
    }
    let mut ordered = Vec::with_capacity(4);
    for (kind, slot) in SensorKind::ORDER.iter().zip(slots) {
        let sig = slot.ok_or_else(|| Error::MissingSensor(kind.to_string()))?;
        if (sig.rate_hz - TARGET_RATE_HZ).abs() > 1e-9 {
            return Err(Error::InvalidArgument(format!(
                "{kind} sampled at {} Hz, expected {TARGET_RATE_HZ}",
                sig.rate_hz
            )));
        }
        ordered.push(sig);
    }
    let t_min = ordered.iter().map(|s| s.len()).min().expect("four signals");
    let mut out = Array2::zeros((t_min, IMU_CHANNELS));
    for sig in ordered {
        let off = sig.kind.column_offset();
        out.slice_mut(s![.., off..off + 3])
            .assign(&sig.channels.slice(s![..t_min, ..]));
    }
    Ok(out)
}

/// Reads a sensor CSV with header `t,x,y,z`. The rate is estimated from
/// the timestamp span; timestamps must be strictly increasing.
pub fn read_sensor_csv(path: &std::path::Path, kind: SensorKind) -> Result<(RawSignal, f64)> {
    let mut reader =
        csv::Reader::from_path(path).map_err(|e| Error::format(path, e.to_string()))?;
    let headers = reader
        .headers()
        .map_err(|e| Error::format(path, e.to_string()))?
        .iter()
        .map(|h| h.trim().to_string())
        .collect::<Vec<_>>();
    if headers != ["t", "x", "y", "z"] {
        return Err(Error::format(
            path,
            format!("expected header t,x,y,z, got {}", headers.join(",")),
        ));
    }
    let mut times = Vec::new();
    let mut values = Vec::new();
    for (line, rec) in reader.records().enumerate() {
        let rec = rec.map_err(|e| Error::format(path, e.to_string()))?;
        let mut row = [0.0; 4];
        for (i, field) in rec.iter().enumerate().take(4) {
            row[i] = field
                .trim()
                .parse::<f64>()
                .map_err(|e| Error::format(path, format!("line {}: {e}", line + 2)))?;
        }
        if rec.len() != 4 {
            return Err(Error::format(
                path,
                format!("line {}: expected 4 fields", line + 2),
            ));
        }
        if let Some(&prev) = times.last() {
            if row[0] <= prev {
                return Err(Error::format(
                    path,
                    format!("line {}: timestamps not increasing", line + 2),
                ));
            }
        }
        times.push(row[0]);
        values.extend_from_slice(&row[1..]);
    }
    if times.len() < 2 {
        return Err(Error::format(path, "need at least two samples"));
    }
    let span = times[times.len() - 1] - times[0];
    let rate = (times.len() - 1) as f64 / span;
    let channels = Array2::from_shape_vec((times.len(), 3), values).expect("3 per row");
    Ok((RawSignal::new(channels, rate, kind)?, times[0]))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array1;

    fn ramp(n: usize, rate: f64, kind: SensorKind) -> RawSignal {
        let col = Array1::from_iter((0..n).map(|i| i as f64));
        let mut m = Array2::zeros((n, 3));
        for c in 0..3 {
            m.column_mut(c).assign(&col);
        }
        RawSignal::new(m, rate, kind).unwrap()
    }

    #[test]
    fn decimates_by_two() {
        let out = resample_signal(&ramp(1000, 100.0, SensorKind::Gyro), 50.0).unwrap();
        assert_eq!(out.len(), 500);
        assert_eq!(out.rate_hz, 50.0);
    }

    #[test]
    fn identity_when_rates_match() {
        let sig = ramp(256, 50.0, SensorKind::Gyro);
        assert_eq!(resample_signal(&sig, 50.0).unwrap(), sig);
    }

    #[test]
    fn ramp_interpolation() {
        let out = resample_signal(&ramp(10, 100.0, SensorKind::AccBody), 50.0).unwrap();
        assert_eq!(
            out.channels.column(0).to_vec(),
            vec![0.0, 2.0, 4.0, 6.0, 8.0]
        );
        let out = resample_signal(&ramp(10, 100.0, SensorKind::AccBody), 40.0).unwrap();
        // positions 0, 2.5, 5, 7.5
        assert_eq!(out.channels.column(1).to_vec(), vec![0.0, 2.5, 5.0, 7.5]);
    }

    #[test]
    fn rejects_upsampling() {
        let err = resample_signal(&ramp(10, 25.0, SensorKind::AccBody), 50.0).unwrap_err();
        assert!(matches!(err, Error::Upsample { .. }));
    }

    #[test]
    fn assembles_and_truncates() {
        let sigs: Vec<_> = SensorKind::ORDER
            .iter()
            .zip([300, 300, 298, 300])
            .map(|(&k, n)| ramp(n, 50.0, k))
            .collect();
        assert_eq!(assemble_channels(&sigs).unwrap().dim(), (298, 12));
        let sigs: Vec<_> = SensorKind::ORDER
            .iter()
            .map(|&k| ramp(256, 50.0, k))
            .collect();
        assert_eq!(assemble_channels(&sigs).unwrap().dim(), (256, 12));
    }

    #[test]
    fn gyro_x_lands_in_column_six() {
        let mut sigs: Vec<_> = SensorKind::ORDER
            .iter()
            .map(|&k| RawSignal::new(Array2::zeros((5, 3)), 50.0, k).unwrap())
            .collect();
        sigs[2].channels[[3, 0]] = 42.0;
        sigs.reverse();
        let m = assemble_channels(&sigs).unwrap();
        assert_eq!(m[[3, 6]], 42.0);
        assert_eq!(m.iter().filter(|&&v| v != 0.0).count(), 1);
    }

    #[test]
    fn names_missing_and_duplicate_kinds() {
        let sigs: Vec<_> = [
            SensorKind::AccBody,
            SensorKind::AccWrist,
            SensorKind::Magnetometer,
        ]
        .iter()
        .map(|&k| ramp(10, 50.0, k))
        .collect();
        match assemble_channels(&sigs) {
            Err(Error::MissingSensor(k)) => assert_eq!(k, "gyro"),
            other => panic!("{other:?}"),
        }
        let mut sigs: Vec<_> = SensorKind::ORDER
            .iter()
            .map(|&k| ramp(10, 50.0, k))
            .collect();
        sigs.push(ramp(10, 50.0, SensorKind::AccWrist));
        match assemble_channels(&sigs) {
            Err(Error::DuplicateSensor(k)) => assert_eq!(k, "acc_wrist"),
            other => panic!("{other:?}"),
        }
    }
}
