//! Plain-text box annotations: one line per frame, `x,y,w,h` in pixels or the
//! literal `absent`.

use std::path::Path;

use super::{Annotation, DatasetError};
use crate::tracking::BoundingBox;

const ABSENT: &str = "absent";

fn parse_line(line: &str, number: usize) -> Result<Annotation, DatasetError> {
    let trimmed = line.trim();
    if trimmed.eq_ignore_ascii_case(ABSENT) {
        return Ok(None);
    }
    let malformed = || DatasetError::MalformedLine {
        line: number,
        content: line.to_string(),
    };
    let fields: Vec<f64> = trimmed
        .split(',')
        .map(|f| f.trim().parse::<f64>().map_err(|_| malformed()))
        .collect::<Result<_, _>>()?;
    let [x, y, w, h] = fields[..] else {
        return Err(malformed());
    };
    if !fields.iter().all(|v| v.is_finite()) {
        return Err(malformed());
    }
    BoundingBox::new(x, y, w, h)
        .map(Some)
        .map_err(|_| DatasetError::NegativeExtent { line: number })
}

/// Parses an annotation file body. Line numbers in errors are 1-based.
/// Trailing blank lines are ignored; interior blank lines are malformed.
pub fn parse_annotations(text: &str) -> Result<Vec<Annotation>, DatasetError> {
    let lines: Vec<&str> = text.lines().collect();
    let end = lines
        .iter()
        .rposition(|l| !l.trim().is_empty())
        .map_or(0, |i| i + 1);
    lines[..end]
        .iter()
        .enumerate()
        .map(|(i, l)| parse_line(l, i + 1))
        .collect()
}

/// Shortest decimal form of each coordinate, so parsing restores the exact bits.
pub fn format_box(b: &Annotation) -> String {
    match b {
        Some(b) => format!("{},{},{},{}", b.x, b.y, b.w, b.h),
        None => ABSENT.to_string(),
    }
}

pub fn serialize_annotations(boxes: &[Annotation]) -> String {
    let mut out = String::new();
    for b in boxes {
        out.push_str(&format_box(b));
        out.push('\n');
    }
    out
}

pub fn read_annotations(path: &Path) -> Result<Vec<Annotation>, DatasetError> {
    parse_annotations(&std::fs::read_to_string(path)?)
}

pub fn write_annotations(path: &Path, boxes: &[Annotation]) -> Result<(), DatasetError> {
    std::fs::write(path, serialize_annotations(boxes))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn examples() {
        let b = parse_annotations("10,20,30,40\n").unwrap();
        assert_eq!(
            b,
            vec![Some(BoundingBox::new(10.0, 20.0, 30.0, 40.0).unwrap())]
        );
        assert_eq!(parse_annotations("absent").unwrap(), vec![None]);
        assert!(matches!(
            parse_annotations("10,20,-1,40"),
            Err(DatasetError::NegativeExtent { line: 1 })
        ));
    }

    #[test]
    fn whitespace_tolerant() {
        let b = parse_annotations("  1.5 , 2,3 ,4 \n ABSENT \n\n").unwrap();
        assert_eq!(b.len(), 2);
        assert_eq!(b[0].unwrap().x, 1.5);
        assert!(b[1].is_none());
    }

    #[test]
    fn malformed_lines_report_position() {
        for bad in ["1,2,3", "1,2,3,4,5", "a,b,c,d", "1,2,nan,4", "\n5,6,7,8"] {
            let err = parse_annotations(&format!("1,1,1,1\n{bad}")).unwrap_err();
            assert!(
                matches!(err, DatasetError::MalformedLine { line: 2, .. }),
                "{bad}: {err}"
            );
        }
    }

    proptest! {
        #[test]
        fn roundtrip_is_bit_exact(
            boxes in prop::collection::vec(
                prop::option::of((-1e4f64..1e4, -1e4f64..1e4, 0f64..1e4, 0f64..1e4)),
                0..50,
            )
        ) {
            let boxes: Vec<Annotation> = boxes
                .into_iter()
                .map(|b| b.map(|(x, y, w, h)| BoundingBox::new(x, y, w, h).unwrap()))
                .collect();
            let text = serialize_annotations(&boxes);
            let back = parse_annotations(&text).unwrap();
            prop_assert_eq!(&back, &boxes);
            prop_assert_eq!(serialize_annotations(&back), text);
        }
    }
}
