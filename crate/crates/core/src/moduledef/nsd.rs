//! Network-Side Directives: the XML description of the agents a module
//! instantiates.
//!
//! ```xml
//! <nsd>
//!   <input name="K" type="integer"/>
//!   <agent id="km" type="KMirror">
//!     <param name="K" value="$K"/>
//!   </agent>
//!   <wire from="km" to="other"/>
//! </nsd>
//! ```
//!
//! A parameter value starting with `$` refers to a formal input; a literal
//! that itself starts with `$` is written `$$...`. `<wire from to>` declares
//! that `from` sends messages to `to`, so `to` is instantiated first.

use std::collections::{BTreeMap, BTreeSet};

use quick_xml::escape::escape;
use quick_xml::events::{BytesStart, Event};
use quick_xml::Reader;
use thiserror::Error;

use crate::agents::{AgentTypeLibrary, SemanticType};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NsdError {
    #[error("malformed document: {0}")]
    Malformed(String),
    #[error("unknown agent type {0}")]
    UnknownAgentType(String),
    #[error("duplicate directive_id {0}")]
    DuplicateDirective(String),
    #[error("duplicate input {0}")]
    DuplicateInput(String),
    #[error("wire {from} -> {to} references an unknown directive")]
    UnresolvedWire { from: String, to: String },
    #[error("wiring cycle through {0}")]
    WiringCycle(String),
    #[error("invalid parameter: {0}")]
    InvalidParam(String),
    #[error("unresolved input {0}")]
    UnresolvedInput(String),
}

#[derive(Clone, Debug, PartialEq)]
pub struct FormalInput {
    pub name: String,
    pub semantic_type: SemanticType,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum ParamBinding {
    Literal(String),
    Input(String),
}

impl ParamBinding {
    fn parse(raw: &str) -> Self {
        if let Some(rest) = raw.strip_prefix("$$") {
            ParamBinding::Literal(format!("${rest}"))
        } else if let Some(name) = raw.strip_prefix('$') {
            ParamBinding::Input(name.to_owned())
        } else {
            ParamBinding::Literal(raw.to_owned())
        }
    }

    fn render(&self) -> String {
        match self {
            ParamBinding::Literal(s) if s.starts_with('$') => format!("${s}"),
            ParamBinding::Literal(s) => s.clone(),
            ParamBinding::Input(n) => format!("${n}"),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Directive {
    pub id: String,
    pub type_name: String,
    pub params: Vec<(String, ParamBinding)>,
    /// Directives this one sends messages to.
    pub wiring: Vec<String>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Nsd {
    pub inputs: Vec<FormalInput>,
    pub directives: Vec<Directive>,
}

impl Nsd {
    pub fn input(&self, name: &str) -> Option<&FormalInput> {
        self.inputs.iter().find(|i| i.name == name)
    }

    pub fn directive(&self, id: &str) -> Option<&Directive> {
        self.directives.iter().find(|d| d.id == id)
    }

    /// Structural and library checks shared by the parser and manifest validation.
    pub fn validate(&self, library: &AgentTypeLibrary) -> Result<(), NsdError> {
        let mut names = BTreeSet::new();
        for i in &self.inputs {
            if i.name.is_empty() {
                return Err(NsdError::Malformed("input name must be non-empty".into()));
            }
            if !names.insert(i.name.as_str()) {
                return Err(NsdError::DuplicateInput(i.name.clone()));
            }
        }
        let mut ids = BTreeSet::new();
        for d in &self.directives {
            if d.id.is_empty() {
                return Err(NsdError::Malformed("agent id must be non-empty".into()));
            }
            if !ids.insert(d.id.as_str()) {
                return Err(NsdError::DuplicateDirective(d.id.clone()));
            }
        }
        for d in &self.directives {
            let schema = library.schema(&d.type_name).ok_or_else(|| NsdError::UnknownAgentType(d.type_name.clone()))?;
            let mut seen = BTreeSet::new();
            for (name, binding) in &d.params {
                if !seen.insert(name.as_str()) {
                    return Err(NsdError::InvalidParam(format!("{}.{name} given twice", d.id)));
                }
                let p = schema
                    .param(name)
                    .ok_or_else(|| NsdError::InvalidParam(format!("{} has no parameter {name}", d.type_name)))?;
                match binding {
                    ParamBinding::Literal(v) => {
                        p.semantic_type
                            .parse_value(v)
                            .map_err(|e| NsdError::InvalidParam(format!("{}.{name}: {e}", d.id)))?;
                    }
                    ParamBinding::Input(input) => {
                        let i = self.input(input).ok_or_else(|| NsdError::UnresolvedInput(input.clone()))?;
                        let compatible = i.semantic_type == p.semantic_type
                            || (i.semantic_type == SemanticType::Integer && p.semantic_type == SemanticType::Number);
                        if !compatible {
                            return Err(NsdError::InvalidParam(format!(
                                "{}.{name} expects {} but input {input} is {}",
                                d.id, p.semantic_type, i.semantic_type
                            )));
                        }
                    }
                }
            }
            for p in &schema.params {
                if p.required && !seen.contains(p.name.as_str()) {
                    return Err(NsdError::InvalidParam(format!("{} requires parameter {}", d.id, p.name)));
                }
            }
            for to in &d.wiring {
                if !ids.contains(to.as_str()) || to == &d.id {
                    return Err(NsdError::UnresolvedWire { from: d.id.clone(), to: to.clone() });
                }
            }
        }
        self.instantiation_order().map(|_| ())
    }

    /// Directive indices with every wire target before its source; ties keep
    /// document order.
    pub fn instantiation_order(&self) -> Result<Vec<usize>, NsdError> {
        let index: BTreeMap<&str, usize> =
            self.directives.iter().enumerate().map(|(i, d)| (d.id.as_str(), i)).collect();
        let n = self.directives.len();
        let mut pending_deps = vec![0usize; n];
        let mut dependents: Vec<Vec<usize>> = vec![Vec::new(); n];
        for (i, d) in self.directives.iter().enumerate() {
            for to in &d.wiring {
                let j = *index
                    .get(to.as_str())
                    .ok_or_else(|| NsdError::UnresolvedWire { from: d.id.clone(), to: to.clone() })?;
                pending_deps[i] += 1;
                dependents[j].push(i);
            }
        }
        let mut ready: BTreeSet<usize> = (0..n).filter(|i| pending_deps[*i] == 0).collect();
        let mut order = Vec::with_capacity(n);
        while let Some(i) = ready.pop_first() {
            order.push(i);
            for &k in &dependents[i] {
                pending_deps[k] -= 1;
                if pending_deps[k] == 0 {
                    ready.insert(k);
                }
            }
        }
        if order.len() < n {
            let stuck = (0..n).find(|i| pending_deps[*i] > 0).expect("some node is stuck");
            return Err(NsdError::WiringCycle(self.directives[stuck].id.clone()));
        }
        Ok(order)
    }
}

fn attrs(e: &BytesStart<'_>, allowed: &[&str]) -> Result<BTreeMap<String, String>, NsdError> {
    let mut out = BTreeMap::new();
    for a in e.attributes() {
        let a = a.map_err(|err| NsdError::Malformed(err.to_string()))?;
        let key = String::from_utf8_lossy(a.key.as_ref()).into_owned();
        if !allowed.contains(&key.as_str()) {
            return Err(NsdError::Malformed(format!(
                "unexpected attribute {key:?} on <{}>",
                String::from_utf8_lossy(e.name().as_ref())
            )));
        }
        let value = a.unescape_value().map_err(|err| NsdError::Malformed(err.to_string()))?.into_owned();
        if out.insert(key.clone(), value).is_some() {
            return Err(NsdError::Malformed(format!("duplicate attribute {key:?}")));
        }
    }
    Ok(out)
}

fn required(map: &mut BTreeMap<String, String>, key: &str, element: &str) -> Result<String, NsdError> {
    map.remove(key).ok_or_else(|| NsdError::Malformed(format!("<{element}> is missing attribute {key:?}")))
}

#[derive(PartialEq)]
enum Level {
    Top,
    InNsd,
    InAgent,
    Done,
}

/// Parses an NSD document and validates it against the library.
pub fn parse_nsd(text: &str, library: &AgentTypeLibrary) -> Result<Nsd, NsdError> {
    let nsd = parse_structure(text)?;
    nsd.validate(library)?;
    Ok(nsd)
}

fn parse_structure(text: &str) -> Result<Nsd, NsdError> {
    let mut reader = Reader::from_str(text);
    reader.config_mut().trim_text(true);
    let mut nsd = Nsd::default();
    let mut wires: Vec<(String, String)> = Vec::new();
    let mut level = Level::Top;
    loop {
        let ev = reader.read_event().map_err(|e| NsdError::Malformed(e.to_string()))?;
        let (start, empty) = match &ev {
            Event::Start(e) => (Some(e.clone()), false),
            Event::Empty(e) => (Some(e.clone()), true),
            _ => (None, false),
        };
        if let Some(e) = start {
            let name = String::from_utf8_lossy(e.name().as_ref()).into_owned();
            match (&level, name.as_str()) {
                (Level::Top, "nsd") => {
                    attrs(&e, &[])?;
                    level = if empty { Level::Done } else { Level::InNsd };
                }
                (Level::InNsd, "input") => {
                    let mut a = attrs(&e, &["name", "type"])?;
                    let name = required(&mut a, "name", "input")?;
                    let ty = required(&mut a, "type", "input")?;
                    let semantic_type = SemanticType::parse_name(&ty)
                        .ok_or_else(|| NsdError::Malformed(format!("unknown input type {ty:?}")))?;
                    nsd.inputs.push(FormalInput { name, semantic_type });
                    if !empty {
                        expect_end(&mut reader, "input")?;
                    }
                }
                (Level::InNsd, "agent") => {
                    let mut a = attrs(&e, &["id", "type"])?;
                    let id = required(&mut a, "id", "agent")?;
                    let type_name = required(&mut a, "type", "agent")?;
                    nsd.directives.push(Directive { id, type_name, params: Vec::new(), wiring: Vec::new() });
                    if !empty {
                        level = Level::InAgent;
                    }
                }
                (Level::InAgent, "param") => {
                    let mut a = attrs(&e, &["name", "value"])?;
                    let pname = required(&mut a, "name", "param")?;
                    let value = required(&mut a, "value", "param")?;
                    nsd.directives
                        .last_mut()
                        .expect("inside an agent")
                        .params
                        .push((pname, ParamBinding::parse(&value)));
                    if !empty {
                        expect_end(&mut reader, "param")?;
                    }
                }
                (Level::InNsd, "wire") => {
                    let mut a = attrs(&e, &["from", "to"])?;
                    wires.push((required(&mut a, "from", "wire")?, required(&mut a, "to", "wire")?));
                    if !empty {
                        expect_end(&mut reader, "wire")?;
                    }
                }
                _ => return Err(NsdError::Malformed(format!("unexpected element <{name}>"))),
            }
            continue;
        }
        match ev {
            Event::End(e) => {
                let name = String::from_utf8_lossy(e.name().as_ref()).into_owned();
                level = match (level, name.as_str()) {
                    (Level::InAgent, "agent") => Level::InNsd,
                    (Level::InNsd, "nsd") => Level::Done,
                    (_, other) => return Err(NsdError::Malformed(format!("unexpected </{other}>"))),
                };
            }
            Event::Text(t) => {
                let t = t.unescape().map_err(|e| NsdError::Malformed(e.to_string()))?;
                if !t.trim().is_empty() {
                    return Err(NsdError::Malformed(format!("unexpected text {:?}", t.trim())));
                }
            }
            Event::CData(_) => return Err(NsdError::Malformed("unexpected CDATA".into())),
            Event::Eof => break,
            _ => {}
        }
    }
    if level != Level::Done {
        return Err(NsdError::Malformed("missing <nsd> root or unterminated element".into()));
    }
    for (from, to) in wires {
        let d = nsd
            .directives
            .iter_mut()
            .find(|d| d.id == from)
            .ok_or_else(|| NsdError::UnresolvedWire { from: from.clone(), to: to.clone() })?;
        d.wiring.push(to);
    }
    Ok(nsd)
}

fn expect_end(reader: &mut Reader<&[u8]>, element: &str) -> Result<(), NsdError> {
    match reader.read_event().map_err(|e| NsdError::Malformed(e.to_string()))? {
        Event::End(e) if e.name().as_ref() == element.as_bytes() => Ok(()),
        _ => Err(NsdError::Malformed(format!("<{element}> must be empty"))),
    }
}

/// Renders the canonical document; `parse_nsd(serialize_nsd(x)) == x`.
pub fn serialize_nsd(nsd: &Nsd) -> String {
    let mut out = String::from("<nsd>\n");
    for i in &nsd.inputs {
        out.push_str(&format!("  <input name=\"{}\" type=\"{}\"/>\n", escape(i.name.as_str()), i.semantic_type));
    }
    for d in &nsd.directives {
        let head = format!("  <agent id=\"{}\" type=\"{}\"", escape(d.id.as_str()), escape(d.type_name.as_str()));
        if d.params.is_empty() {
            out.push_str(&head);
            out.push_str("/>\n");
            continue;
        }
        out.push_str(&head);
        out.push_str(">\n");
        for (name, binding) in &d.params {
            out.push_str(&format!(
                "    <param name=\"{}\" value=\"{}\"/>\n",
                escape(name.as_str()),
                escape(binding.render().as_str())
            ));
        }
        out.push_str("  </agent>\n");
    }
    for d in &nsd.directives {
        for to in &d.wiring {
            out.push_str(&format!("  <wire from=\"{}\" to=\"{}\"/>\n", escape(d.id.as_str()), escape(to.as_str())));
        }
    }
    out.push_str("</nsd>\n");
    out
}
