//! YOLO text labels: one `<class> <cx> <cy> <w> <h>` line per object,
//! coordinates normalized to `[0, 1]`.
//!
//! Haze does not move objects, so label files are copied byte for byte; this
//! module only validates them on the way through.

use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum LabelError {
    #[error("line {line}: {message}")]
    Malformed { line: usize, message: String },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct YoloLabel {
    pub class_id: u32,
    pub cx: f64,
    pub cy: f64,
    pub w: f64,
    pub h: f64,
}

pub fn parse_yolo(text: &str) -> Result<Vec<YoloLabel>, LabelError> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let l = raw.trim();
        if l.is_empty() {
            continue;
        }
        let bad = |message: String| LabelError::Malformed { line, message };
        let fields: Vec<&str> = l.split_whitespace().collect();
        if fields.len() != 5 {
            return Err(bad(format!("expected 5 fields, found {}", fields.len())));
        }
        let class_id = fields[0]
            .parse::<u32>()
            .map_err(|_| bad(format!("bad class id {:?}", fields[0])))?;
        let mut coords = [0.0f64; 4];
        for (slot, f) in coords.iter_mut().zip(&fields[1..]) {
            let v = f.parse::<f64>().map_err(|_| bad(format!("bad coordinate {f:?}")))?;
            if !(0.0..=1.0).contains(&v) {
                return Err(bad(format!("coordinate {v} outside [0, 1]")));
            }
            *slot = v;
        }
        let [cx, cy, w, h] = coords;
        out.push(YoloLabel { class_id, cx, cy, w, h });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_and_skips_blank_lines() {
        let v = parse_yolo("0 0.5 0.5 0.2 0.1\n\n2 0.1 0.9 0.05 0.05\n").unwrap();
        assert_eq!(v.len(), 2);
        assert_eq!(v[1].class_id, 2);
    }

    #[test]
    fn reports_line_numbers() {
        assert_eq!(
            parse_yolo("0 0.5 0.5 0.2 0.1\n1 0.5 1.5 0.2 0.1\n"),
            Err(LabelError::Malformed {
                line: 2,
                message: "coordinate 1.5 outside [0, 1]".into()
            })
        );
        assert!(parse_yolo("car 0.5 0.5 0.2 0.1").is_err());
        assert!(parse_yolo("0 0.5 0.5 0.2").is_err());
    }
}
