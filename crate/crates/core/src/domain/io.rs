//! JSON instance files and newline-delimited datasets.

use std::io::{BufRead, Write};

use serde_json::{Map, Value};

use super::instance::{Customer, Depot, Instance};
use crate::error::{CoreError, Result};

fn perr(record: impl Into<String>, message: impl Into<String>) -> CoreError {
    CoreError::Parse {
        record: record.into(),
        message: message.into(),
    }
}

fn field<'a>(obj: &'a Map<String, Value>, key: &str, record: &str) -> Result<&'a Value> {
    obj.get(key).ok_or_else(|| perr(record, format!("missing field `{key}`")))
}

fn num(obj: &Map<String, Value>, key: &str, record: &str) -> Result<f64> {
    let v = field(obj, key, record)?
        .as_f64()
        .ok_or_else(|| perr(record, format!("field `{key}` is not a number")))?;
    if !v.is_finite() {
        return Err(perr(record, format!("field `{key}` is not finite")));
    }
    Ok(v)
}

fn uint(obj: &Map<String, Value>, key: &str, record: &str) -> Result<u64> {
    field(obj, key, record)?
        .as_u64()
        .ok_or_else(|| perr(record, format!("field `{key}` is not a non-negative integer")))
}

fn object<'a>(v: &'a Value, record: &str) -> Result<&'a Map<String, Value>> {
    v.as_object().ok_or_else(|| perr(record, "expected a JSON object"))
}

fn instance_from_value(v: &Value) -> Result<Instance> {
    let root = object(v, "instance")?;
    let n = uint(root, "n", "instance")? as usize;
    let m = uint(root, "m", "instance")? as usize;
    let beta = num(root, "beta", "instance")?;
    let seed = uint(root, "seed", "instance")?;
    if n == 0 {
        return Err(perr("instance", "n must be at least 1"));
    }
    if m == 0 {
        return Err(perr("instance", "m must be at least 1"));
    }
    if beta < 0.0 {
        return Err(perr("instance", format!("negative beta {beta}")));
    }

    let d = object(field(root, "depot", "instance")?, "depot")?;
    let depot = Depot {
        x: num(d, "x", "depot")?,
        y: num(d, "y", "depot")?,
        open: num(d, "open", "depot")?,
        close: num(d, "close", "depot")?,
    };
    if depot.open != 0.0 {
        return Err(perr("depot", format!("open time must be 0, got {}", depot.open)));
    }
    if depot.close <= 0.0 {
        return Err(perr("depot", format!("close time must be positive, got {}", depot.close)));
    }

    let list = field(root, "customers", "instance")?
        .as_array()
        .ok_or_else(|| perr("instance", "field `customers` is not an array"))?;
    if list.len() != n {
        return Err(perr("instance", format!("n = {n} but {} customers listed", list.len())));
    }
    let mut slots: Vec<Option<Customer>> = vec![None; n];
    for (pos, cv) in list.iter().enumerate() {
        let at = format!("customers[{pos}]");
        let c = object(cv, &at)?;
        let id = uint(c, "id", &at)? as usize;
        let rec = format!("id {id}");
        let cust = Customer {
            id,
            x: num(c, "x", &rec)?,
            y: num(c, "y", &rec)?,
            s: num(c, "s", &rec)?,
            t: num(c, "t", &rec)?,
        };
        if id >= n {
            return Err(perr(rec, format!("id out of range 0..{n}")));
        }
        if cust.s > cust.t {
            return Err(perr(rec.clone(), format!("window inverted at id {id}")));
        }
        if slots[id].replace(cust).is_some() {
            return Err(perr(rec, format!("duplicate id {id}")));
        }
    }
    let customers = slots.into_iter().map(|c| c.expect("ids cover 0..n")).collect();
    Ok(Instance {
        n,
        m,
        beta,
        seed,
        depot,
        customers,
    })
}

/// Parses and validates one instance document.
pub fn parse_instance(text: &str) -> Result<Instance> {
    let v: Value = serde_json::from_str(text).map_err(|e| perr("instance", e.to_string()))?;
    instance_from_value(&v)
}

/// Compact single-line JSON; floats use the shortest round-trip form.
pub fn write_instance(inst: &Instance) -> String {
    serde_json::to_string(inst).expect("instances always serialize")
}

pub fn read_dataset<R: BufRead>(reader: R) -> Result<Vec<Instance>> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let inst = parse_instance(&line).map_err(|e| match e {
            CoreError::Parse { record, message } => perr(format!("line {} ({record})", i + 1), message),
            other => other,
        })?;
        out.push(inst);
    }
    Ok(out)
}

pub fn write_dataset<W: Write>(mut w: W, instances: &[Instance]) -> Result<()> {
    for inst in instances {
        writeln!(w, "{}", write_instance(inst))?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::generate_instance;

    fn message(e: CoreError) -> String {
        e.to_string()
    }

    #[test]
    fn round_trip() {
        let inst = generate_instance(12, 3, 100.0, 77);
        let text = write_instance(&inst);
        let back = parse_instance(&text).unwrap();
        assert_eq!(back, inst);
        assert_eq!(write_instance(&back), text);
    }

    #[test]
    fn dataset_round_trip() {
        let insts: Vec<_> = (0..4).map(|s| generate_instance(5, 2, 10.0, s)).collect();
        let mut buf = Vec::new();
        write_dataset(&mut buf, &insts).unwrap();
        assert_eq!(read_dataset(buf.as_slice()).unwrap(), insts);
    }

    #[test]
    fn inverted_window() {
        let mut v: Value = serde_json::from_str(&write_instance(&generate_instance(3, 1, 1.0, 0))).unwrap();
        v["customers"][1]["t"] = Value::from(-1.0);
        let e = message(parse_instance(&v.to_string()).unwrap_err());
        assert!(e.contains("window inverted at id 1"), "{e}");
    }

    #[test]
    fn schema_errors() {
        let base: Value = serde_json::from_str(&write_instance(&generate_instance(3, 1, 1.0, 0))).unwrap();

        let mut v = base.clone();
        v.as_object_mut().unwrap().remove("depot");
        assert!(message(parse_instance(&v.to_string()).unwrap_err()).contains("depot"));

        let mut v = base.clone();
        v["customers"][2]["id"] = Value::from(0);
        assert!(message(parse_instance(&v.to_string()).unwrap_err()).contains("duplicate id 0"));

        let mut v = base.clone();
        v["customers"][0]["x"] = Value::from("left");
        let e = message(parse_instance(&v.to_string()).unwrap_err());
        assert!(e.contains("id 0") && e.contains("`x`"), "{e}");

        let mut v = base;
        v["n"] = Value::from(4);
        assert!(parse_instance(&v.to_string()).is_err());

        let e = message(read_dataset("{}\n".as_bytes()).unwrap_err());
        assert!(e.contains("line 1"), "{e}");
    }
}
