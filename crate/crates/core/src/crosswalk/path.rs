//! Path expressions over a document tree: dotted keys, `[N]` indices and
//! `[*]` fan-out.

use serde_json::Value;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Segment {
    Key(String),
    Index(usize),
    All,
}

pub fn parse_path(src: &str) -> Result<Vec<Segment>, String> {
    let mut segs = Vec::new();
    let mut rest = src;
    let mut expect_key = true;
    while !rest.is_empty() {
        if let Some(r) = rest.strip_prefix('[') {
            let close = r.find(']').ok_or_else(|| format!("unclosed `[` in `{src}`"))?;
            let inner = &r[..close];
            segs.push(match inner {
                "*" => Segment::All,
                n if !n.is_empty() && n.bytes().all(|b| b.is_ascii_digit()) => {
                    Segment::Index(n.parse().map_err(|_| format!("index `{n}` is too large"))?)
                }
                other => return Err(format!("`[{other}]` is neither an index nor `[*]`")),
            });
            rest = &r[close + 1..];
            expect_key = false;
            continue;
        }
        if !expect_key {
            rest = rest
                .strip_prefix('.')
                .ok_or_else(|| format!("expected `.` or `[` in `{src}` before `{rest}`"))?;
        }
        let end = rest.find(['.', '[', ']']).unwrap_or(rest.len());
        if end == 0 {
            return Err(format!("empty key in `{src}`"));
        }
        segs.push(Segment::Key(rest[..end].to_owned()));
        rest = &rest[end..];
        expect_key = false;
    }
    if segs.is_empty() || src.ends_with('.') {
        return Err(format!("`{src}` is not a path"));
    }
    Ok(segs)
}

/// All non-null values `segs` reaches from `root`, in document order.
/// `[*]` on a single value yields that value, so one-or-many fields need
/// no special casing.
pub fn evaluate<'a>(root: &'a Value, segs: &[Segment]) -> Vec<&'a Value> {
    let mut cur = vec![root];
    for seg in segs {
        let mut next = Vec::new();
        for v in cur {
            match (seg, v) {
                (Segment::Key(k), Value::Object(m)) => next.extend(m.get(k)),
                (Segment::Index(i), Value::Array(a)) => next.extend(a.get(*i)),
                (Segment::All, Value::Array(a)) => next.extend(a.iter()),
                (Segment::All, Value::Null) => {}
                (Segment::All, other) => next.push(other),
                _ => {}
            }
        }
        cur = next;
    }
    cur.retain(|v| !v.is_null());
    cur
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn grammar() {
        use Segment::*;
        assert_eq!(parse_path("a").unwrap(), vec![Key("a".into())]);
        assert_eq!(
            parse_path("author[*].givenName").unwrap(),
            vec![Key("author".into()), All, Key("givenName".into())]
        );
        assert_eq!(parse_path("[0][*]").unwrap(), vec![Index(0), All]);
        assert_eq!(parse_path("@type").unwrap(), vec![Key("@type".into())]);
        for bad in ["", ".", "a.", "a..b", "a[", "a[x]", "a[]", "a]b", "a[0]b", "[-1]"] {
            assert!(parse_path(bad).is_err(), "{bad}");
        }
    }

    #[test]
    fn fan_out() {
        let doc = json!({"a": [{"b": 1}, {"b": null}, {"c": 3}, {"b": 4}], "s": {"b": 5}});
        let got = |p: &str| evaluate(&doc, &parse_path(p).unwrap()).into_iter().cloned().collect::<Vec<_>>();
        assert_eq!(got("a[*].b"), vec![json!(1), json!(4)]);
        assert_eq!(got("a[3].b"), vec![json!(4)]);
        assert_eq!(got("a[9].b"), Vec::<Value>::new());
        assert_eq!(got("s[*].b"), vec![json!(5)]);
        assert_eq!(got("a.b"), Vec::<Value>::new());
        assert_eq!(got("missing"), Vec::<Value>::new());
    }
}
