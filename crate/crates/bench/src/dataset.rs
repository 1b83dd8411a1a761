//! Plain-text interchange format for sampled LSTD systems.
//!
//! A header line `m n gamma`, then `m` lines holding the `n` entries of a `Φ`
//! row, the `n` entries of the matching `Φ'` row and the payoff, separated by
//! whitespace. Floats are written in shortest round-trip form.

use std::io::{BufRead, Write};

use ndarray::{Array1, Array2};
use pmc_lstd::lstd::LstdData;

use crate::BenchError;

pub fn write_dataset(data: &LstdData, mut out: impl Write) -> std::io::Result<()> {
    let (m, n) = (data.n_samples(), data.n_features());
    writeln!(out, "{m} {n} {}", data.gamma())?;
    let (phi, phi_next, g) = (data.phi(), data.phi_next(), data.payoffs());
    let mut line = String::new();
    for i in 0..m {
        line.clear();
        for v in phi.row(i).iter().chain(phi_next.row(i).iter()) {
            line.push_str(&v.to_string());
            line.push(' ');
        }
        line.push_str(&g[i].to_string());
        writeln!(out, "{line}")?;
    }
    out.flush()
}

fn parse_err(line: usize, message: impl Into<String>) -> BenchError {
    BenchError::Dataset {
        line,
        message: message.into(),
    }
}

pub fn read_dataset(input: impl BufRead) -> Result<LstdData, BenchError> {
    let mut lines = input.lines().enumerate().filter_map(|(i, l)| match l {
        Ok(text) if text.trim().is_empty() => None,
        other => Some((i + 1, other)),
    });
    let (hline, header) = lines.next().ok_or_else(|| parse_err(1, "empty dataset"))?;
    let header = header.map_err(|e| parse_err(hline, e.to_string()))?;
    let fields: Vec<&str> = header.split_whitespace().collect();
    if fields.len() != 3 {
        return Err(parse_err(hline, format!("header must be `m n gamma`, got `{header}`")));
    }
    let m: usize = fields[0]
        .parse()
        .map_err(|_| parse_err(hline, format!("bad sample count `{}`", fields[0])))?;
    let n: usize = fields[1]
        .parse()
        .map_err(|_| parse_err(hline, format!("bad feature count `{}`", fields[1])))?;
    let gamma: f64 = fields[2]
        .parse()
        .map_err(|_| parse_err(hline, format!("bad discount `{}`", fields[2])))?;

    let mut phi = Array2::zeros((m, n));
    let mut phi_next = Array2::zeros((m, n));
    let mut g = Array1::zeros(m);
    for i in 0..m {
        let (lno, text) = lines
            .next()
            .ok_or_else(|| parse_err(hline + i + 1, format!("expected {m} sample rows, found {i}")))?;
        let text = text.map_err(|e| parse_err(lno, e.to_string()))?;
        let values: Vec<f64> = text
            .split_whitespace()
            .map(|t| {
                t.parse::<f64>()
                    .map_err(|_| parse_err(lno, format!("bad number `{t}`")))
            })
            .collect::<Result<_, _>>()?;
        if values.len() != 2 * n + 1 {
            return Err(parse_err(
                lno,
                format!("expected {} values (2n + 1), found {}", 2 * n + 1, values.len()),
            ));
        }
        phi.row_mut(i).assign(&Array1::from(values[..n].to_vec()));
        phi_next.row_mut(i).assign(&Array1::from(values[n..2 * n].to_vec()));
        g[i] = values[2 * n];
    }
    if let Some((lno, _)) = lines.next() {
        return Err(parse_err(lno, format!("trailing data after {m} sample rows")));
    }
    LstdData::new(phi, phi_next, g, gamma).map_err(|e| BenchError::Core {
        context: "dataset".into(),
        source: e,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn round_trip_is_exact() {
        let data = LstdData::new(
            array![[1.0, 0.1 + 0.2], [-3.5e-12, 7.0]],
            array![[0.0, 1.0 / 3.0], [2.0, -1.0]],
            array![-1.0, 0.0],
            0.9,
        )
        .unwrap();
        let mut buf = Vec::new();
        write_dataset(&data, &mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("2 2 0.9\n"));
        let back = read_dataset(buf.as_slice()).unwrap();
        assert_eq!(back.phi(), data.phi());
        assert_eq!(back.phi_next(), data.phi_next());
        assert_eq!(back.payoffs(), data.payoffs());
        assert_eq!(back.gamma(), 0.9);
    }

    #[test]
    fn errors_name_the_line() {
        let err = read_dataset("1 2 0.9\n1 2 3 4\n".as_bytes()).unwrap_err();
        assert!(matches!(err, BenchError::Dataset { line: 2, .. }), "{err}");
        let err = read_dataset("1 2\n".as_bytes()).unwrap_err();
        assert!(matches!(err, BenchError::Dataset { line: 1, .. }));
        let err = read_dataset("1 1 0.9\n1 x 3\n".as_bytes()).unwrap_err();
        assert!(err.to_string().contains("`x`"));
        let err = read_dataset("2 1 0.9\n1 0 3\n".as_bytes()).unwrap_err();
        assert!(matches!(err, BenchError::Dataset { .. }));
        let err = read_dataset("1 1 1.5\n1 0 3\n".as_bytes()).unwrap_err();
        assert!(matches!(err, BenchError::Core { .. }));
    }
}
