//! Targeted-analysis scenarios: one thought template per vulnerability kind.

use serde::Deserialize;
use thiserror::Error;

use crate::model::{Category, ModelError, VulnCode, VulnTypeDescriptor, VulnerabilityRegistry};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ScenarioTemplate {
    /// Stable identifier; the vulnerability code for built-in scenarios.
    pub id: String,
    pub vuln: VulnTypeDescriptor,
    pub detection_guidance: String,
    pub exemplar: String,
}

impl ScenarioTemplate {
    pub fn sentinel(&self) -> String {
        self.vuln.sentinel()
    }

    pub fn code(&self) -> &VulnCode {
        &self.vuln.code
    }
}

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("scenario `{id}` references code {code} which is not in the registry")]
    UnknownCode { id: String, code: String },
    #[error("registry type {0} has neither a built-in nor an extra scenario")]
    Uncovered(String),
    #[error("scenario `{0}` has an empty exemplar")]
    EmptyExemplar(String),
    #[error("duplicate scenario id `{0}`")]
    DuplicateId(String),
    #[error("scenario pack: {0}")]
    Pack(String),
    #[error(transparent)]
    Model(#[from] ModelError),
}

struct Builtin {
    code: &'static str,
    guidance: &'static str,
    exemplar: &'static str,
}

const BUILTINS: [Builtin; 10] = [
    Builtin {
        code: "RE",
        guidance: "Find every external call that transfers ether or hands control to another contract \
                   (call, send, transfer, token hooks). For each one, check whether state that guards the \
                   call (balances, flags, counters) is updated only after the call returns, and whether a \
                   reentrancy guard or the checks-effects-interactions order protects the function.",
        exemplar: "function withdraw() public {\n    uint amount = balances[msg.sender];\n    \
                   (bool ok, ) = msg.sender.call{value: amount}(\"\");\n    require(ok);\n    \
                   balances[msg.sender] = 0;\n}\n\
                   The balance is cleared after the external call, so the receiver can re-enter withdraw() \
                   and drain the contract.",
    },
    Builtin {
        code: "IO",
        guidance: "Locate arithmetic on unsigned and signed integers (additions, subtractions, \
                   multiplications, token amounts, timers). Check the compiler version: before 0.8.0 \
                   arithmetic wraps silently unless SafeMath is used; from 0.8.0 it wraps only inside \
                   unchecked blocks. Determine whether attacker-controlled inputs can push a value past \
                   its bounds.",
        exemplar: "pragma solidity ^0.4.24;\nmapping(address => uint) balance;\n\
                   function transfer(address to, uint value) public {\n    \
                   require(balance[msg.sender] - value >= 0);\n    balance[msg.sender] -= value;\n    \
                   balance[to] += value;\n}\n\
                   The require is always true for unsigned values, so the subtraction wraps and mints \
                   an enormous balance.",
    },
    Builtin {
        code: "USE",
        guidance: "List every low-level send, call, delegatecall-free value transfer and callcode. Check \
                   whether the boolean return value is inspected; a failed send that is ignored leaves the \
                   contract believing a payment happened.",
        exemplar: "function payout(address winner) public {\n    winner.send(prize);\n    paid = true;\n}\n\
                   The return value of send is discarded, so a failed payment still marks the prize as paid.",
    },
    Builtin {
        code: "UD",
        guidance: "Find delegatecall usages. Check whether the target address or the calldata can be \
                   influenced by an untrusted caller, and whether the callee's storage layout can overwrite \
                   owner or implementation slots in the calling contract.",
        exemplar: "function forward(address impl, bytes data) public {\n    impl.delegatecall(data);\n}\n\
                   Anyone can choose the implementation, which then runs with this contract's storage and \
                   can overwrite the owner.",
    },
    Builtin {
        code: "TOD",
        guidance: "Examine functions involving fund transfers, resource allocation, or gas price \
                   manipulation. Check whether the outcome of a transaction depends on state that another \
                   pending transaction can change first, such as a reward claimable by whoever submits a \
                   solution, a price that the owner can update, or an approval that can be front-run.",
        exemplar: "function setReward() public payable {\n    require(msg.sender == owner);\n    \
                   owner.transfer(reward);\n    reward = msg.value;\n}\n\
                   function claimReward(uint submission) public {\n    require(submission < 10);\n    \
                   msg.sender.transfer(reward);\n}\n\
                   The owner can watch the mempool and change the reward before a pending claim is mined.",
    },
    Builtin {
        code: "TM",
        guidance: "Find uses of block.timestamp and now. Check whether they decide fund transfers, \
                   winners, deadlines or random values in a way a block producer could bias by shifting \
                   the timestamp by several seconds.",
        exemplar: "function play() public payable {\n    require(msg.value == 10 ether);\n    \
                   if (block.timestamp % 15 == 0) {\n        msg.sender.transfer(address(this).balance);\n    }\n}\n\
                   A block producer can choose a timestamp that makes the condition true and take the pot.",
    },
    Builtin {
        code: "RP",
        guidance: "Find values used as randomness: block hashes, block numbers, timestamps, difficulty, \
                   or private state. Check whether an attacker or a contract acting in the same \
                   transaction can compute the value in advance and only participate when it wins.",
        exemplar: "function guess(uint8 n) public payable {\n    \
                   uint8 answer = uint8(keccak256(blockhash(block.number - 1), now));\n    \
                   if (n == answer) msg.sender.transfer(2 ether);\n}\n\
                   Every input of the answer is public, so an attacking contract computes it and always wins.",
    },
    Builtin {
        code: "TX",
        guidance: "Find authorization checks that use tx.origin. Check whether a privileged function \
                   trusts tx.origin instead of msg.sender, which lets a malicious contract relay a call \
                   made by the legitimate owner.",
        exemplar: "function withdrawAll(address to) public {\n    require(tx.origin == owner);\n    \
                   to.transfer(address(this).balance);\n}\n\
                   If the owner calls any malicious contract, it can call withdrawAll and pass the check.",
    },
    Builtin {
        code: "USU",
        guidance: "Find selfdestruct and suicide calls. Check whether the function that reaches them is \
                   restricted to an authorized account and whether that restriction can be bypassed or \
                   reinitialized.",
        exemplar: "function kill() public {\n    selfdestruct(msg.sender);\n}\n\
                   Any account can destroy the contract and collect its balance.",
    },
    Builtin {
        code: "GL",
        guidance: "Find loops whose iteration count grows with user-controlled data (arrays of \
                   participants, unbounded mappings walked through an index), external calls inside \
                   loops, and payouts that revert the whole batch when one recipient fails. Check whether \
                   the function can exceed the block gas limit and become permanently unusable.",
        exemplar: "function refundAll() public {\n    for (uint i = 0; i < investors.length; i++) {\n        \
                   investors[i].transfer(amounts[i]);\n    }\n}\n\
                   Once enough investors join, the loop needs more gas than a block allows and nobody \
                   can be refunded.",
    },
];

/// Built-in scenario for `descriptor`, if one of the ten stock templates covers it.
pub fn builtin_scenario(descriptor: &VulnTypeDescriptor) -> Option<ScenarioTemplate> {
    BUILTINS
        .iter()
        .find(|b| b.code == descriptor.code.as_str())
        .map(|b| ScenarioTemplate {
            id: b.code.to_string(),
            vuln: descriptor.clone(),
            detection_guidance: b.guidance.to_string(),
            exemplar: b.exemplar.to_string(),
        })
}

/// Ordered scenario list: one per registry descriptor, then the extras.
/// Descriptors without a built-in template must be covered by an extra.
pub fn scenario_catalog(
    registry: &VulnerabilityRegistry,
    extras: &[ScenarioTemplate],
) -> Result<Vec<ScenarioTemplate>, ScenarioError> {
    for extra in extras {
        if !registry.contains(extra.vuln.code.as_str()) {
            return Err(ScenarioError::UnknownCode {
                id: extra.id.clone(),
                code: extra.vuln.code.to_string(),
            });
        }
        if extra.exemplar.trim().is_empty() {
            return Err(ScenarioError::EmptyExemplar(extra.id.clone()));
        }
    }
    let mut catalog = Vec::with_capacity(registry.len() + extras.len());
    for descriptor in registry.descriptors() {
        match builtin_scenario(descriptor) {
            Some(s) => catalog.push(s),
            None if extras.iter().any(|e| e.vuln.code == descriptor.code) => {}
            None => return Err(ScenarioError::Uncovered(descriptor.code.to_string())),
        }
    }
    for extra in extras {
        if catalog.iter().any(|s| s.id == extra.id) {
            return Err(ScenarioError::DuplicateId(extra.id.clone()));
        }
        catalog.push(extra.clone());
    }
    Ok(catalog)
}

#[derive(Deserialize)]
struct PackFile {
    #[serde(default)]
    scenario: Vec<PackEntry>,
}

#[derive(Deserialize)]
struct PackEntry {
    id: Option<String>,
    code: String,
    name: Option<String>,
    category: Option<String>,
    guidance: String,
    exemplar: String,
}

/// Parses a TOML scenario pack (`[[scenario]]` tables with `code`, `name`,
/// `category`, `guidance`, `exemplar`, optional `id`). Codes unknown to
/// `registry` are registered from the entry's `name` and `category`.
pub fn load_scenario_pack(
    text: &str,
    registry: &VulnerabilityRegistry,
) -> Result<(VulnerabilityRegistry, Vec<ScenarioTemplate>), ScenarioError> {
    let pack: PackFile = toml::from_str(text).map_err(|e| ScenarioError::Pack(e.to_string()))?;
    let mut registry = registry.clone();
    let mut extras = Vec::with_capacity(pack.scenario.len());
    for entry in pack.scenario {
        let code = VulnCode::new(entry.code.trim())?;
        let descriptor = match registry.get(code.as_str()) {
            Some(d) => d.clone(),
            None => {
                let name = entry
                    .name
                    .clone()
                    .ok_or_else(|| ScenarioError::Pack(format!("new code {code} needs a name")))?;
                let category = match entry.category.as_deref() {
                    Some(c) => c.parse()?,
                    None => Category::ComplexLogic,
                };
                let d = VulnTypeDescriptor::new(code.clone(), name, category);
                registry = registry.extend(d.clone())?;
                d
            }
        };
        extras.push(ScenarioTemplate {
            id: entry.id.unwrap_or_else(|| code.to_string()),
            vuln: descriptor,
            detection_guidance: entry.guidance.trim().to_string(),
            exemplar: entry.exemplar.trim().to_string(),
        });
    }
    Ok((registry, extras))
}
