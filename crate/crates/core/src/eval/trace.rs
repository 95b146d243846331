use std::io::{Read, Write};

use crate::envs::EpisodeResult;
use crate::error::{Error, Result};

/// One parsed row of a trace CSV.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceRow {
    pub episode: usize,
    pub t: usize,
    pub obs: Vec<f64>,
    pub action: [f64; 2],
    pub codes: Vec<usize>,
}

fn csv_err(e: csv::Error) -> Error {
    Error::Invalid(format!("trace csv: {e}"))
}

/// Writes `episode,t,obs_0..,action_0,action_1,code_0..` rows. Steps
/// without codes leave the code columns empty.
pub fn write_traces_csv<W: Write>(results: &[EpisodeResult], out: W) -> Result<()> {
    let first = results.iter().flat_map(|r| r.trace.first()).next();
    let obs_dim = first.map_or(0, |s| s.obs.len());
    let n_codes = results.iter().flat_map(|r| &r.trace).filter_map(|s| s.codes.as_ref().map(Vec::len)).max().unwrap_or(0);
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["episode".to_string(), "t".to_string()];
    header.extend((0..obs_dim).map(|i| format!("obs_{i}")));
    header.extend(["action_0".to_string(), "action_1".to_string()]);
    header.extend((0..n_codes).map(|i| format!("code_{i}")));
    w.write_record(&header).map_err(csv_err)?;
    for (ep, r) in results.iter().enumerate() {
        for (t, s) in r.trace.iter().enumerate() {
            if s.obs.len() != obs_dim {
                return Err(Error::shape("write_traces_csv", format!("observation of length {} in a {obs_dim}-dim trace", s.obs.len())));
            }
            let mut row = vec![ep.to_string(), t.to_string()];
            row.extend(s.obs.iter().map(|v| v.to_string()));
            row.extend(s.action.iter().map(|v| v.to_string()));
            let codes = s.codes.as_deref().unwrap_or(&[]);
            row.extend((0..n_codes).map(|i| codes.get(i).map_or(String::new(), |c| c.to_string())));
            w.write_record(&row).map_err(csv_err)?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Parses a trace CSV written by [`write_traces_csv`].
pub fn read_traces_csv<R: Read>(input: R) -> Result<Vec<TraceRow>> {
    let mut r = csv::Reader::from_reader(input);
    let header = r.headers().map_err(csv_err)?.clone();
    let names: Vec<&str> = header.iter().collect();
    if names.len() < 4 || names[0] != "episode" || names[1] != "t" {
        return Err(Error::Invalid("trace csv: header must start with episode,t".into()));
    }
    let obs_dim = names[2..].iter().take_while(|n| n.starts_with("obs_")).count();
    let a = 2 + obs_dim;
    if names.get(a) != Some(&"action_0") || names.get(a + 1) != Some(&"action_1") {
        return Err(Error::Invalid("trace csv: missing action columns".into()));
    }
    if names[a + 2..].iter().any(|n| !n.starts_with("code_")) {
        return Err(Error::Invalid("trace csv: unexpected column".into()));
    }
    let num = |s: &str| -> Result<f64> {
        let v: f64 = s.trim().parse().map_err(|_| Error::Invalid(format!("trace csv: bad number {s:?}")))?;
        if v.is_finite() {
            Ok(v)
        } else {
            Err(Error::NonFinite(format!("trace value {s:?}")))
        }
    };
    let idx = |s: &str| -> Result<usize> { s.trim().parse().map_err(|_| Error::Invalid(format!("trace csv: bad index {s:?}"))) };
    let mut rows = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(csv_err)?;
        if rec.len() != names.len() {
            return Err(Error::Invalid("trace csv: ragged row".into()));
        }
        let obs = (0..obs_dim).map(|i| num(&rec[2 + i])).collect::<Result<Vec<_>>>()?;
        let codes = (a + 2..rec.len()).filter(|&i| !rec[i].is_empty()).map(|i| idx(&rec[i])).collect::<Result<Vec<_>>>()?;
        rows.push(TraceRow { episode: idx(&rec[0])?, t: idx(&rec[1])?, obs, action: [num(&rec[a])?, num(&rec[a + 1])?], codes });
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs::{EnvKind, TraceStep};

    #[test]
    fn round_trip() {
        let ep = EpisodeResult {
            kind: EnvKind::Detour,
            successes: 0,
            order: vec![],
            command: None,
            route: None,
            collided: false,
            steps: 2,
            trace: vec![
                TraceStep { obs: vec![-0.8, 0.0], action: [0.1, 0.0625], codes: Some(vec![3, 1]) },
                TraceStep { obs: vec![-0.7, 0.0625], action: [0.1, -0.1], codes: Some(vec![0, 7]) },
            ],
        };
        let mut buf = Vec::new();
        write_traces_csv(&[ep.clone(), ep], &mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("episode,t,obs_0,obs_1,action_0,action_1,code_0,code_1\n"));
        let rows = read_traces_csv(&buf[..]).unwrap();
        assert_eq!(rows.len(), 4);
        assert_eq!(rows[3], TraceRow { episode: 1, t: 1, obs: vec![-0.7, 0.0625], action: [0.1, -0.1], codes: vec![0, 7] });
    }

    #[test]
    fn malformed_input_is_an_error() {
        for bad in
            ["", "x,y\n", "episode,t,obs_0,action_0,action_1\n0,0,NaN,0,0\n", "episode,t,action_0,action_1,foo\n", "episode,t,action_0,action_1\n0\n"]
        {
            assert!(read_traces_csv(bad.as_bytes()).is_err(), "{bad:?}");
        }
    }
}
