//! Model checkpoints on top of the shared binary container.

use serde::{Deserialize, Serialize};

use super::model::{BnBranch, Mode, Model, ParamMap};
use super::spec::ModelSpec;
use crate::container::{Container, ContainerKind, Record};
use crate::error::{ContainerError, Result};

const TAG_PARAM: u8 = 1;
const TAG_STATE: u8 = 2;

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    spec: ModelSpec,
    mode: Mode,
    bn_branch: BnBranch,
}

/// Serializes spec, parameters and running statistics. Byte output depends
/// only on those values, so save→load→save is the identity.
pub fn save_checkpoint(model: &Model) -> Vec<u8> {
    let header = Header { spec: model.spec().clone(), mode: model.mode(), bn_branch: model.bn_branch() };
    let mut records = Vec::new();
    for (tag, map) in [(TAG_PARAM, model.params()), (TAG_STATE, model.bn_state())] {
        for (name, t) in map {
            records.push(Record { tag, name: name.clone(), tensor: t.clone() });
        }
    }
    Container {
        kind: ContainerKind::Checkpoint,
        header: serde_json::to_string(&header).expect("header serializes"),
        records,
    }
    .to_bytes()
}

pub fn load_checkpoint(bytes: &[u8]) -> Result<Model> {
    let c = Container::from_bytes(bytes, ContainerKind::Checkpoint)?;
    let header: Header = serde_json::from_str(&c.header)?;
    let mut params = ParamMap::new();
    let mut state = ParamMap::new();
    for r in c.records {
        let map = match r.tag {
            TAG_PARAM => &mut params,
            TAG_STATE => &mut state,
            t => return Err(ContainerError::Malformed(format!("unknown record tag {t}")).into()),
        };
        if map.insert(r.name.clone(), r.tensor).is_some() {
            return Err(ContainerError::Malformed(format!("duplicate record `{}`", r.name)).into());
        }
    }
    let mut model = Model::from_parts(header.spec, params, state)?;
    model.set_mode(header.mode);
    model.set_bn_branch(header.bn_branch);
    Ok(model)
}

/// SHA-256 of the checkpoint bytes, hex encoded.
pub fn checkpoint_hash(bytes: &[u8]) -> String {
    use sha2::{Digest, Sha256};
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}
