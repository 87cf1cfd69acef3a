//! Heatmaps as binary PGM (P5) or plain CSV.

use std::path::Path;

use gaitkit_core::perception::Heatmap;

use crate::error::{FormatError, Result};

/// Reads a binary PGM with maxval up to 255 and scales it to `[0, 1]`.
pub fn parse_pgm(bytes: &[u8]) -> Result<Heatmap> {
    let mut pos = 0;
    let mut fields = Vec::with_capacity(4);
    while fields.len() < 4 {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if pos < bytes.len() && bytes[pos] == b'#' {
            while pos < bytes.len() && bytes[pos] != b'\n' {
                pos += 1;
            }
            continue;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(FormatError::syntax(1, "truncated PGM header"));
        }
        fields.push(String::from_utf8_lossy(&bytes[start..pos]).into_owned());
    }
    if fields[0] != "P5" {
        return Err(FormatError::syntax(1, format!("expected P5 magic, found `{}`", fields[0])));
    }
    let num = |s: &str, what: &str| s.parse::<usize>().map_err(|_| FormatError::syntax(1, format!("bad PGM {what} `{s}`")));
    let (w, h, maxval) = (num(&fields[1], "width")?, num(&fields[2], "height")?, num(&fields[3], "maxval")?);
    if maxval == 0 || maxval > 255 {
        return Err(FormatError::syntax(1, format!("unsupported PGM maxval {maxval}")));
    }
    // Exactly one whitespace byte separates the header from the raster.
    pos += 1;
    let data = bytes.get(pos..pos + w * h).ok_or_else(|| FormatError::syntax(1, format!("PGM raster shorter than {w}x{h}")))?;
    Ok(Heatmap::new(w, h, data.iter().map(|&b| (b as f64 / maxval as f64).min(1.0)).collect())?)
}

pub fn to_pgm(h: &Heatmap) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n255\n", h.width(), h.height()).into_bytes();
    out.extend(h.values().iter().map(|v| (v * 255.0).round().clamp(0.0, 255.0) as u8));
    out
}

/// One image row per line, comma separated.
pub fn parse_heatmap_csv(text: &str) -> Result<Heatmap> {
    let mut width = None;
    let mut values = Vec::new();
    let mut rows = 0;
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let row = line
            .split(',')
            .map(|f| f.trim().parse::<f64>().ok().filter(|v| v.is_finite() && (0.0..=1.0).contains(v)))
            .collect::<Option<Vec<f64>>>()
            .ok_or_else(|| FormatError::syntax(i + 1, "heatmap values must be numbers in [0, 1]"))?;
        match width {
            None => width = Some(row.len()),
            Some(w) if w != row.len() => return Err(FormatError::syntax(i + 1, format!("expected {w} columns, found {}", row.len()))),
            _ => {}
        }
        values.extend(row);
        rows += 1;
    }
    let width = width.ok_or_else(|| FormatError::syntax(1, "heatmap is empty"))?;
    Ok(Heatmap::new(width, rows, values)?)
}

pub fn to_csv(h: &Heatmap) -> String {
    let mut out = String::new();
    for row in h.values().chunks(h.width()) {
        let line: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        out.push_str(&line.join(","));
        out.push('\n');
    }
    out
}

/// Chooses the format from the extension: `.pgm` or anything else as CSV.
pub fn load(path: &Path) -> Result<Heatmap> {
    let bytes = std::fs::read(path).map_err(|e| FormatError::io(path, e))?;
    if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("pgm")) {
        parse_pgm(&bytes)
    } else {
        let text = String::from_utf8(bytes).map_err(|_| FormatError::syntax(1, "heatmap CSV is not UTF-8"))?;
        parse_heatmap_csv(&text)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pgm_round_trip() {
        let h = Heatmap::from_fn(5, 3, |x, y| (x * 3 + y) as f64 / 17.0).unwrap();
        let back = parse_pgm(&to_pgm(&h)).unwrap();
        assert_eq!((back.width(), back.height()), (5, 3));
        for (a, b) in h.values().iter().zip(back.values()) {
            assert!((a - b).abs() <= 0.5 / 255.0 + 1e-12);
        }
    }

    #[test]
    fn pgm_header_comments_and_errors() {
        let mut bytes = b"P5\n# made by hand\n2 1\n# max\n100\n".to_vec();
        bytes.extend([50u8, 100]);
        let h = parse_pgm(&bytes).unwrap();
        assert_eq!(h.values(), &[0.5, 1.0]);
        assert!(parse_pgm(b"P2\n1 1\n255\n0").is_err());
        assert!(parse_pgm(b"P5\n4 4\n255\n\x00\x01").is_err());
        assert!(parse_pgm(b"P5\n1 1\n65535\n\x00\x00").is_err());
    }

    #[test]
    fn csv_round_trip_and_errors() {
        let h = Heatmap::from_fn(4, 2, |x, y| (x + 4 * y) as f64 / 8.0).unwrap();
        assert_eq!(parse_heatmap_csv(&to_csv(&h)).unwrap(), h);
        let err = parse_heatmap_csv("0,0.5\n0.1\n").unwrap_err();
        assert!(err.to_string().starts_with("line 2:"));
        assert!(parse_heatmap_csv("0,2\n").is_err());
        assert!(parse_heatmap_csv("\n").is_err());
    }
}
