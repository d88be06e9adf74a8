//! Event CSV ingestion: `timestamp,x,y,polarity` per line.

use std::io::Read;
use std::path::Path;

use evsnn_core::{Event, Polarity, SensorGeometry};

use crate::error::{Context, Error, Result};

/// Parses events in file order. A first line whose leading field is not a
/// number is treated as a header and skipped. Blank lines are ignored.
pub fn parse_event_csv<R: Read>(reader: R, geometry: &SensorGeometry) -> Result<Vec<Event>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let mut record = csv::StringRecord::new();
    let mut events = Vec::new();
    let mut first = true;
    loop {
        match rdr.read_record(&mut record) {
            Ok(true) => {}
            Ok(false) => break,
            Err(e) => {
                let line = e.position().map_or(0, |p| p.line());
                return Err(Error::Parse {
                    line,
                    message: e.to_string(),
                });
            }
        }
        let line = record.position().map_or(0, |p| p.line());
        if std::mem::take(&mut first) && record.get(0).is_some_and(|f| f.parse::<f64>().is_err()) {
            continue;
        }
        events.push(parse_record(&record, line, geometry)?);
    }
    Ok(events)
}

fn parse_record(record: &csv::StringRecord, line: u64, geometry: &SensorGeometry) -> Result<Event> {
    if record.len() != 4 {
        return Err(Error::Parse {
            line,
            message: format!("expected 4 fields, found {}", record.len()),
        });
    }
    let field = |i: usize, name: &str| -> Result<u64> {
        record[i].parse::<u64>().map_err(|_| Error::Parse {
            line,
            message: format!("{name} {:?} is not a non-negative integer", &record[i]),
        })
    };
    let timestamp = field(0, "timestamp")?;
    let x = field(1, "x")?;
    let y = field(2, "y")?;
    let pol = field(3, "polarity")?;
    let range = |message: String| Error::Range { line, message };
    if x >= geometry.width as u64 {
        return Err(range(format!("x={x} outside sensor width {}", geometry.width)));
    }
    if y >= geometry.height as u64 {
        return Err(range(format!("y={y} outside sensor height {}", geometry.height)));
    }
    let polarity = u8::try_from(pol)
        .ok()
        .and_then(Polarity::from_bit)
        .ok_or_else(|| range(format!("polarity {pol} is not 0 or 1")))?;
    Ok(Event::new(timestamp, x as u16, y as u16, polarity))
}

pub fn read_event_csv(path: &Path, geometry: &SensorGeometry) -> Result<Vec<Event>> {
    let file = std::fs::File::open(path).in_file(path)?;
    parse_event_csv(std::io::BufReader::new(file), geometry).in_file(path)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str) -> Result<Vec<Event>> {
        parse_event_csv(text.as_bytes(), &SensorGeometry::default())
    }

    #[test]
    fn single_line() {
        assert_eq!(parse("1000,5,7,1").unwrap(), [Event::new(1000, 5, 7, Polarity::On)]);
    }

    #[test]
    fn empty_input() {
        assert!(parse("").unwrap().is_empty());
    }

    #[test]
    fn header_and_crlf() {
        let events = parse("timestamp,x,y,polarity\r\n10,1,2,0\r\n20, 3 ,4,1\r\n\r\n").unwrap();
        assert_eq!(
            events,
            [Event::new(10, 1, 2, Polarity::Off), Event::new(20, 3, 4, Polarity::On)]
        );
    }

    #[test]
    fn only_first_line_may_be_a_header() {
        match parse("1,1,1,1\nts,x,y,p\n") {
            Err(Error::Parse { line: 2, .. }) => {}
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn out_of_range_coordinates() {
        match parse("1000,500,7,1") {
            Err(Error::Range { line: 1, message }) => assert!(message.contains("x=500")),
            other => panic!("{other:?}"),
        }
        assert!(matches!(parse("0,0,180,0"), Err(Error::Range { .. })));
        assert!(matches!(parse("0,239,179,1").as_deref(), Ok([_])));
    }

    #[test]
    fn bad_polarity_is_a_range_error() {
        assert!(matches!(parse("0,1,1,2"), Err(Error::Range { .. })));
        assert!(matches!(parse("0,1,1,x"), Err(Error::Parse { .. })));
    }

    #[test]
    fn malformed_lines_report_their_number() {
        for (text, line) in [
            ("1,2,3,1\n4,5,6\n", 2),
            ("1,2,3,1\n1,2,3,1\n-4,5,6,0\n", 3),
            ("a,b,c,d\n1,2,3,1,0\n", 2),
        ] {
            match parse(text) {
                Err(Error::Parse { line: l, .. }) => assert_eq!(l, line, "{text:?}"),
                other => panic!("{text:?}: {other:?}"),
            }
        }
    }
}
