//! Reads json, xml and ini documents into one tree shape.

use quick_xml::events::Event;
use quick_xml::{Reader, XmlVersion};
use serde_json::{Map, Value};

use super::{CrosswalkError, SourceFormat};

pub fn parse_document(bytes: &[u8], format: SourceFormat) -> Result<Value, CrosswalkError> {
    let err = |message: String| CrosswalkError::ParseError { format, message };
    match format {
        SourceFormat::Json => serde_json::from_slice(bytes).map_err(|e| err(e.to_string())),
        SourceFormat::Xml => {
            let text = std::str::from_utf8(bytes).map_err(|e| err(e.to_string()))?;
            xml_tree(text).map_err(err)
        }
        SourceFormat::Ini => {
            let text = std::str::from_utf8(bytes).map_err(|e| err(e.to_string()))?;
            ini_tree(text).map_err(err)
        }
    }
}

/// Sections become objects, so `section.key` addresses a value. Keys
/// outside any section sit at the top level.
fn ini_tree(text: &str) -> Result<Value, String> {
    let ini = ini::Ini::load_from_str(text).map_err(|e| e.to_string())?;
    let mut root = Map::new();
    for (section, props) in ini.iter() {
        let target = match section {
            None => &mut root,
            Some(s) => {
                let slot = root.entry(s.to_owned()).or_insert_with(|| Value::Object(Map::new()));
                match slot {
                    Value::Object(m) => m,
                    _ => return Err(format!("section `{s}` clashes with a top-level key")),
                }
            }
        };
        for (k, v) in props.iter() {
            target.insert(k.to_owned(), Value::String(v.to_owned()));
        }
    }
    Ok(Value::Object(root))
}

struct Open {
    name: String,
    fields: Map<String, Value>,
    text: String,
}

fn insert_child(parent: &mut Map<String, Value>, name: String, node: Value) {
    match parent.get_mut(&name) {
        None => {
            parent.insert(name, node);
        }
        Some(Value::Array(a)) => a.push(node),
        Some(existing) => {
            let first = existing.take();
            *existing = Value::Array(vec![first, node]);
        }
    }
}

fn finish(open: Open) -> Value {
    let text = open.text.trim();
    if open.fields.is_empty() {
        return Value::String(text.to_owned());
    }
    let mut fields = open.fields;
    if !text.is_empty() {
        fields.insert("#text".into(), Value::String(text.to_owned()));
    }
    Value::Object(fields)
}

fn start(e: &quick_xml::events::BytesStart<'_>) -> Result<Open, String> {
    let mut fields = Map::new();
    for a in e.attributes() {
        let a = a.map_err(|e| e.to_string())?;
        let key = a.key.local_name();
        // Namespace declarations carry no metadata.
        if a.key.as_ref() == "xmlns" || a.key.as_ref().starts_with("xmlns:") {
            continue;
        }
        let value = a.normalized_value(XmlVersion::Implicit1_0).map_err(|e| e.to_string())?;
        fields.insert(format!("@{}", key.as_ref()), Value::String(value.into_owned()));
    }
    Ok(Open { name: e.local_name().as_ref().to_owned(), fields, text: String::new() })
}

/// Element names lose their namespace prefix. Attributes become `@name`
/// keys, repeated children become arrays, and an element with only text
/// becomes a string. The root element is the single top-level key.
fn xml_tree(text: &str) -> Result<Value, String> {
    let mut reader = Reader::from_str(text);
    reader.config_mut().check_end_names = true;
    let mut stack: Vec<Open> = Vec::new();
    let mut root = Map::new();
    loop {
        let ev = reader.read_event().map_err(|e| format!("at byte {}: {e}", reader.buffer_position()))?;
        match ev {
            Event::Start(e) => stack.push(start(&e)?),
            Event::Empty(e) => {
                let node = finish(start(&e)?);
                let name = e.local_name().as_ref().to_owned();
                match stack.last_mut() {
                    Some(parent) => insert_child(&mut parent.fields, name, node),
                    None if root.is_empty() => {
                        root.insert(name, node);
                    }
                    None => return Err("more than one root element".into()),
                }
            }
            Event::End(_) => {
                let open = stack.pop().ok_or("unexpected closing tag")?;
                let name = open.name.clone();
                let node = finish(open);
                match stack.last_mut() {
                    Some(parent) => insert_child(&mut parent.fields, name, node),
                    None if root.is_empty() => {
                        root.insert(name, node);
                    }
                    None => return Err("more than one root element".into()),
                }
            }
            Event::Text(t) => {
                let s = t.xml10_content();
                match stack.last_mut() {
                    Some(open) => open.text.push_str(&s),
                    None if s.trim().is_empty() => {}
                    None => return Err("text outside the root element".into()),
                }
            }
            Event::CData(c) => {
                let s = c.xml10_content();
                stack.last_mut().ok_or("CDATA outside the root element")?.text.push_str(&s);
            }
            Event::GeneralRef(r) => {
                let ch = match r.resolve_char_ref().map_err(|e| e.to_string())? {
                    Some(c) => c,
                    None => match r.as_ref() {
                        "lt" => '<',
                        "gt" => '>',
                        "amp" => '&',
                        "apos" => '\'',
                        "quot" => '"',
                        other => return Err(format!("undefined entity `&{other};`")),
                    },
                };
                stack.last_mut().ok_or("reference outside the root element")?.text.push(ch);
            }
            Event::Eof => break,
            Event::Decl(_) | Event::PI(_) | Event::Comment(_) | Event::DocType(_) => {}
        }
    }
    if !stack.is_empty() {
        return Err(format!("element `{}` is not closed", stack.last().map(|o| o.name.as_str()).unwrap_or("")));
    }
    if root.is_empty() {
        return Err("no root element".into());
    }
    Ok(Value::Object(root))
}
