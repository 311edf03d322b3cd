use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::CollectiveKind;

/// Accumulated traffic for one `(op, tag)` pair.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrafficTotals {
    /// Bits each rank contributes, summed over calls.
    pub payload_bits: u64,
    /// `cost_factor(op) * payload_bits`.
    pub charged_bits: u64,
    /// Parameters covered by the calls; the per-parameter normaliser.
    pub params: u64,
    pub calls: u64,
}

impl TrafficTotals {
    pub fn bits_per_param_per_rank(&self) -> f64 {
        if self.params == 0 {
            0.0
        } else {
            self.charged_bits as f64 / self.params as f64
        }
    }
}

/// One exported ledger line.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LedgerRow {
    pub op: CollectiveKind,
    pub tag: String,
    pub payload_bits: u64,
    pub charged_bits: u64,
    pub bits_per_param_per_rank: f64,
}

/// Per-operation traffic under the declared cost model.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct TrafficLedger {
    entries: BTreeMap<(CollectiveKind, String), TrafficTotals>,
}

impl TrafficLedger {
    pub fn record(&mut self, op: CollectiveKind, tag: &str, payload_bits: u64, params: u64) {
        let e = self.entries.entry((op, tag.to_owned())).or_default();
        e.payload_bits += payload_bits;
        e.charged_bits += op.cost_factor() * payload_bits;
        e.params += params;
        e.calls += 1;
    }

    pub fn get(&self, op: CollectiveKind, tag: &str) -> Option<&TrafficTotals> {
        self.entries.get(&(op, tag.to_owned()))
    }

    pub fn iter(&self) -> impl Iterator<Item = (CollectiveKind, &str, &TrafficTotals)> {
        self.entries
            .iter()
            .map(|((op, tag), t)| (*op, tag.as_str(), t))
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Charged bits summed over every entry whose tag is in `tags`.
    pub fn charged_bits(&self, tags: &[&str]) -> u64 {
        self.iter()
            .filter(|(_, tag, _)| tags.contains(tag))
            .map(|(_, _, t)| t.charged_bits)
            .sum()
    }

    pub fn merge(&mut self, other: &TrafficLedger) {
        for ((op, tag), t) in &other.entries {
            let e = self.entries.entry((*op, tag.clone())).or_default();
            e.payload_bits += t.payload_bits;
            e.charged_bits += t.charged_bits;
            e.params += t.params;
            e.calls += t.calls;
        }
    }

    pub fn rows(&self) -> Vec<LedgerRow> {
        self.iter()
            .map(|(op, tag, t)| LedgerRow {
                op,
                tag: tag.to_owned(),
                payload_bits: t.payload_bits,
                charged_bits: t.charged_bits,
                bits_per_param_per_rank: t.bits_per_param_per_rank(),
            })
            .collect()
    }

    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        for row in self.rows() {
            w.serialize(row).expect("ledger rows serialize");
        }
        String::from_utf8(w.into_inner().expect("in-memory writer")).expect("csv is utf-8")
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.rows()).expect("ledger rows serialize")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn all_reduce_is_charged_twice() {
        let mut l = TrafficLedger::default();
        l.record(CollectiveKind::AllReduce, "index", 1000, 1000);
        l.record(CollectiveKind::Reduce, "sketch", 16_000, 1000);
        assert_eq!(
            l.get(CollectiveKind::AllReduce, "index")
                .unwrap()
                .bits_per_param_per_rank(),
            2.0
        );
        assert_eq!(
            l.get(CollectiveKind::Reduce, "sketch")
                .unwrap()
                .bits_per_param_per_rank(),
            16.0
        );
        assert_eq!(l.charged_bits(&["index", "sketch"]), 18_000);
    }

    #[test]
    fn csv_columns() {
        let mut l = TrafficLedger::default();
        l.record(CollectiveKind::ReduceScatter, "baseline", 3200, 100);
        assert_eq!(
            l.to_csv(),
            "op,tag,payload_bits,charged_bits,bits_per_param_per_rank\nreduce_scatter,baseline,3200,3200,32.0\n"
        );
        let rows: Vec<LedgerRow> = serde_json::from_str(&l.to_json()).unwrap();
        assert_eq!(rows[0].bits_per_param_per_rank, 32.0);
    }
}
