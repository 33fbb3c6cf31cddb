//! Threshold networks described in `net`/`layer`/`neuron` XML.

use std::collections::{BTreeMap, HashSet};

use roxmltree::{Document, Node};

use crate::error::PipelineError;
use crate::training::ClassId;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerType {
    Input,
    Hidden,
    Output,
}

impl LayerType {
    pub fn name(self) -> &'static str {
        match self {
            LayerType::Input => "input",
            LayerType::Hidden => "hidden",
            LayerType::Output => "output",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Synapse {
    pub reference: usize,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Neuron {
    pub index: usize,
    pub thresh: f64,
    pub inputs: Vec<Synapse>,
    pub outputs: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub layer_type: LayerType,
    pub index: usize,
    pub neurons: Vec<Neuron>,
}

/// Layers in document order.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkConfig {
    pub layers: Vec<Layer>,
}

fn layer_path(pos: usize) -> String {
    format!("/net/layer[{}]", pos + 1)
}

fn neuron_path(layer: usize, neuron: usize) -> String {
    format!("{}/neuron[{}]", layer_path(layer), neuron + 1)
}

fn children<'a, 'input>(node: Node<'a, 'input>) -> impl Iterator<Item = Node<'a, 'input>> {
    node.children().filter(Node::is_element)
}

fn attr<T: std::str::FromStr>(node: Node, name: &str, path: &str) -> Result<T, PipelineError> {
    node.attribute(name)
        .and_then(|v| v.trim().parse().ok())
        .ok_or_else(|| PipelineError::InvalidAttribute(format!("{path}/@{name}")))
}

fn finite(v: f64, path: String) -> Result<f64, PipelineError> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(PipelineError::InvalidAttribute(path))
    }
}

pub fn parse_network(xml: &str) -> Result<NetworkConfig, PipelineError> {
    let doc = Document::parse(xml).map_err(|e| PipelineError::MalformedNetwork(e.to_string()))?;
    let root = doc.root_element();
    if root.tag_name().name() != "net" {
        return Err(PipelineError::UnexpectedElement(format!("/{}", root.tag_name().name())));
    }
    let mut layers = Vec::new();
    for (lpos, lnode) in children(root).enumerate() {
        let lpath = layer_path(lpos);
        if lnode.tag_name().name() != "layer" {
            return Err(PipelineError::UnexpectedElement(format!(
                "/net/{}[{}]",
                lnode.tag_name().name(),
                lpos + 1
            )));
        }
        let layer_type = match lnode.attribute("type") {
            Some("input") => LayerType::Input,
            Some("hidden") => LayerType::Hidden,
            Some("output") => LayerType::Output,
            _ => return Err(PipelineError::InvalidAttribute(format!("{lpath}/@type"))),
        };
        let index = attr(lnode, "index", &lpath)?;
        let mut neurons = Vec::new();
        for (npos, nnode) in children(lnode).enumerate() {
            let name = nnode.tag_name().name();
            if name != "neuron" {
                // e.g. an <output> directly under <layer>
                return Err(PipelineError::UnexpectedElement(format!("{lpath}/{name}[{}]", npos + 1)));
            }
            let npath = neuron_path(lpos, neurons.len());
            let mut neuron = Neuron {
                index: attr(nnode, "index", &npath)?,
                thresh: finite(attr(nnode, "thresh", &npath)?, format!("{npath}/@thresh"))?,
                inputs: Vec::new(),
                outputs: Vec::new(),
            };
            for child in children(nnode) {
                match child.tag_name().name() {
                    "input" => {
                        let p = format!("{npath}/input[{}]", neuron.inputs.len() + 1);
                        neuron.inputs.push(Synapse {
                            reference: attr(child, "ref", &p)?,
                            weight: finite(attr(child, "weight", &p)?, format!("{p}/@weight"))?,
                        });
                    }
                    "output" => {
                        let p = format!("{npath}/output[{}]", neuron.outputs.len() + 1);
                        neuron.outputs.push(attr(child, "ref", &p)?);
                    }
                    other => return Err(PipelineError::UnexpectedElement(format!("{npath}/{other}"))),
                }
            }
            neurons.push(neuron);
        }
        layers.push(Layer {
            layer_type,
            index,
            neurons,
        });
    }
    Ok(NetworkConfig { layers })
}

/// Layer positions (into `cfg.layers`) in forward-pass order.
fn forward_order(cfg: &NetworkConfig) -> Result<Vec<usize>, PipelineError> {
    let mut seen = HashSet::new();
    for (pos, l) in cfg.layers.iter().enumerate() {
        if !seen.insert(l.index) {
            return Err(PipelineError::DuplicateIndex(layer_path(pos)));
        }
    }
    let mut order: Vec<usize> = (0..cfg.layers.len()).collect();
    order.sort_by_key(|&p| cfg.layers[p].index);
    for t in [LayerType::Input, LayerType::Output] {
        match cfg.layers.iter().filter(|l| l.layer_type == t).count() {
            0 => return Err(PipelineError::MissingLayer(t.name().into())),
            1 => {}
            _ => return Err(PipelineError::MisplacedLayer(t.name().into())),
        }
    }
    if cfg.layers[order[0]].layer_type != LayerType::Input {
        return Err(PipelineError::MisplacedLayer("input".into()));
    }
    if cfg.layers[*order.last().unwrap()].layer_type != LayerType::Output {
        return Err(PipelineError::MisplacedLayer("output".into()));
    }
    Ok(order)
}

/// Checks every structural rule and reports the path of the first violation.
pub fn validate_network(cfg: &NetworkConfig) -> Result<(), PipelineError> {
    let order = forward_order(cfg)?;
    let indices: Vec<HashSet<usize>> = cfg
        .layers
        .iter()
        .map(|l| l.neurons.iter().map(|n| n.index).collect())
        .collect();
    for (step, &pos) in order.iter().enumerate() {
        let layer = &cfg.layers[pos];
        let prev = step.checked_sub(1).map(|s| order[s]);
        let next = order.get(step + 1).copied();
        let mut seen = HashSet::new();
        for (npos, n) in layer.neurons.iter().enumerate() {
            let path = neuron_path(pos, npos);
            if !seen.insert(n.index) {
                return Err(PipelineError::DuplicateIndex(path));
            }
            if !n.thresh.is_finite() {
                return Err(PipelineError::InvalidAttribute(format!("{path}/@thresh")));
            }
            for (i, s) in n.inputs.iter().enumerate() {
                let p = format!("{path}/input[{}]", i + 1);
                let Some(prev) = prev else {
                    return Err(PipelineError::UnexpectedElement(p));
                };
                if !indices[prev].contains(&s.reference) {
                    return Err(PipelineError::DanglingRef(p));
                }
                if !s.weight.is_finite() {
                    return Err(PipelineError::InvalidAttribute(format!("{p}/@weight")));
                }
            }
            for (i, r) in n.outputs.iter().enumerate() {
                if !next.is_some_and(|next| indices[next].contains(r)) {
                    return Err(PipelineError::DanglingRef(format!("{path}/output[{}]", i + 1)));
                }
            }
        }
    }
    Ok(())
}

fn fire(sum: f64, thresh: f64) -> f64 {
    if sum >= thresh {
        1.0
    } else {
        0.0
    }
}

/// Forward pass with step activation. Input neuron k (ascending index)
/// reads `fv[k]`; the class is the index of the first output neuron that fires.
pub fn classify_network(fv: &[f64], cfg: &NetworkConfig) -> Result<ClassId, PipelineError> {
    validate_network(cfg)?;
    let order = forward_order(cfg)?;
    let sorted = |pos: usize| {
        let mut ns: Vec<&Neuron> = cfg.layers[pos].neurons.iter().collect();
        ns.sort_by_key(|n| n.index);
        ns
    };
    let inputs = sorted(order[0]);
    if fv.len() != inputs.len() {
        return Err(PipelineError::DimensionMismatch {
            expected: inputs.len(),
            got: fv.len(),
        });
    }
    let mut act: BTreeMap<usize, f64> = inputs
        .iter()
        .zip(fv)
        .map(|(n, x)| (n.index, fire(*x, n.thresh)))
        .collect();
    for &pos in &order[1..] {
        act = sorted(pos)
            .into_iter()
            .map(|n| {
                let sum: f64 = n.inputs.iter().map(|s| s.weight * act[&s.reference]).sum();
                (n.index, fire(sum, n.thresh))
            })
            .collect();
    }
    act.iter()
        .find(|(_, a)| **a > 0.0)
        .map(|(i, _)| *i as ClassId)
        .ok_or(PipelineError::NoFire)
}
