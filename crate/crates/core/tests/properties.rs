//! Property tests for the contract invariants that hold over arbitrary
//! inputs rather than fixed fixtures.

use proptest::prelude::*;

use portcullis_core::action::ActionRequest;
use portcullis_core::armor::{
    default_markers, paraphrase, sanitize_untrusted, NormalizingTransform,
};
use portcullis_core::flow::{
    check_action, parse_policy, pretty_print, Datum, Decision, LabelPredicate, LabelSet,
    StepOutput, TaintLabel, TaintState,
};
use portcullis_core::session::{audit_verify, AuditKind, AuditLog, TickClock, VerifyOutcome};
use portcullis_core::urlguard::parse_url;
use portcullis_core::vault::{redact, SecretRecord, Vault};

fn arb_label() -> impl Strategy<Value = TaintLabel> {
    prop_oneof![
        Just(TaintLabel::Trusted),
        "[a-z]{1,8}\\.(io|com|org)".prop_map(TaintLabel::untrusted),
        "[a-z_]{1,10}".prop_map(TaintLabel::secret),
    ]
}

fn arb_label_set() -> impl Strategy<Value = LabelSet> {
    proptest::collection::vec(arb_label(), 0..5).prop_map(LabelSet::from_labels)
}

proptest! {
    #[test]
    fn label_union_is_commutative_associative_idempotent(
        a in arb_label_set(),
        b in arb_label_set(),
        c in arb_label_set(),
    ) {
        prop_assert_eq!(a.union(&b), b.union(&a));
        prop_assert_eq!(a.union(&b).union(&c), a.union(&b.union(&c)));
        prop_assert_eq!(a.union(&a), a);
    }

    #[test]
    fn propagation_is_invariant_to_union_reassociation(
        label_sets in proptest::collection::vec(arb_label_set(), 1..6),
        origin in proptest::option::of("[a-z]{1,8}\\.io"),
    ) {
        // Route 1: one action with all inputs at once.
        let mut state1 = TaintState::new();
        let mut action = ActionRequest::new("extract_content", "s", 0);
        for (i, labels) in label_sets.iter().enumerate() {
            let content = format!("input {i}");
            let datum = Datum::new(&content, labels.clone());
            state1.register(&datum);
            action = action.with_arg(format!("a{i}"), content, datum);
        }
        let outputs = vec![StepOutput { content: "out".to_string(), extracted_from: origin.clone() }];
        let produced1 = state1.propagate(&action, &outputs).unwrap();

        // Route 2: fold the union pairwise in reverse order.
        let mut expected = LabelSet::trusted();
        for labels in label_sets.iter().rev() {
            expected = labels.union(&expected);
        }
        if let Some(origin) = &origin {
            expected.insert(TaintLabel::untrusted(origin.clone()));
        }
        prop_assert_eq!(&produced1[0].labels, &expected);
    }

    #[test]
    fn appending_steps_never_removes_labels(
        first in arb_label_set(),
        second in arb_label_set(),
    ) {
        let mut state = TaintState::new();
        let datum = Datum::new("shared content", first.clone());
        state.register(&datum);
        let before = state.labels_of(&datum.content_digest).unwrap().clone();

        let datum2 = Datum::new("shared content", second);
        state.register(&datum2);
        let after = state.labels_of(&datum.content_digest).unwrap();
        prop_assert!(after.is_superset(&before));
    }

    #[test]
    fn sanitize_is_idempotent_on_arbitrary_text(text in "\\PC{0,300}") {
        let markers = default_markers();
        let (once, _) = sanitize_untrusted(&text, &markers);
        let (twice, events) = sanitize_untrusted(&once, &markers);
        prop_assert_eq!(&once, &twice);
        prop_assert!(events.is_empty());
    }

    #[test]
    fn normalizer_is_idempotent_on_arbitrary_text(text in "\\PC{0,300}") {
        let once = paraphrase(&text, &NormalizingTransform).unwrap();
        let twice = paraphrase(&once, &NormalizingTransform).unwrap();
        prop_assert_eq!(once, twice);
    }

    #[test]
    fn redact_is_idempotent_and_leak_free(
        text in "[a-z0-9 ]{0,120}",
        v1 in "[a-z0-9]{4,12}",
        v2 in "[a-z0-9]{4,12}",
    ) {
        prop_assume!(v1 != v2 && !v1.contains(&v2) && !v2.contains(&v1));
        let vault = Vault::new(vec![
            SecretRecord::new("s1", v1.clone()),
            SecretRecord::new("s2", v2.clone()),
        ]).unwrap();
        let once = redact(&text, &vault);
        prop_assert_eq!(&redact(&once, &vault), &once);
        prop_assert!(!once.contains(&v1));
        prop_assert!(!once.contains(&v2));
    }

    #[test]
    fn parse_serialize_parse_is_identity(raw in "https?://[a-zA-Z0-9.:@_~-]{1,40}(/[a-zA-Z0-9._/-]{0,20})?(\\?[a-z=&]{0,10})?(#[a-z]{0,6})?") {
        if let Ok(parsed) = parse_url(&raw) {
            let reparsed = parse_url(&parsed.to_url_string()).unwrap();
            prop_assert_eq!(parsed, reparsed);
        }
    }

    #[test]
    fn audit_chain_verifies_under_random_session_interleavings(
        sessions in proptest::collection::vec(0u8..4, 1..40),
    ) {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("audit.jsonl");
        let log = AuditLog::create(&path).unwrap();
        let clock = TickClock::default();
        for (n, s) in sessions.iter().enumerate() {
            log.append(
                &format!("session-{s}"),
                AuditKind::ActionChecked,
                &serde_json::json!({ "n": n }),
                &clock,
            ).unwrap();
        }
        prop_assert_eq!(
            audit_verify(&path).unwrap(),
            VerifyOutcome::Ok { events: sessions.len() as u64 }
        );
    }

    #[test]
    fn any_single_field_mutation_is_detected(
        count in 3u64..12,
        target in 0u64..12,
        field in 0u8..5,
    ) {
        let target = (target % count) + 1;
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("audit.jsonl");
        let log = AuditLog::create(&path).unwrap();
        let clock = TickClock::default();
        for n in 0..count {
            log.append("s", AuditKind::VerdictIssued, &serde_json::json!({ "n": n }), &clock).unwrap();
        }
        let text = std::fs::read_to_string(&path).unwrap();
        let mut lines: Vec<String> = text.lines().map(str::to_string).collect();
        let idx = target as usize; // line 0 is the header
        let mut event: serde_json::Value = serde_json::from_str(&lines[idx]).unwrap();
        match field {
            0 => event["timestamp_ms"] = serde_json::json!(event["timestamp_ms"].as_i64().unwrap() + 1),
            1 => event["session_id"] = serde_json::json!("tampered"),
            2 => event["kind"] = serde_json::json!("fallback"),
            3 => {
                let digest = event["payload_digest"].as_str().unwrap();
                let flipped = if digest.starts_with('0') { "1" } else { "0" };
                event["payload_digest"] = serde_json::json!(format!("{flipped}{}", &digest[1..]));
            }
            _ => event["seq"] = serde_json::json!(event["seq"].as_u64().unwrap() + 1),
        }
        lines[idx] = event.to_string();
        std::fs::write(&path, lines.join("\n") + "\n").unwrap();
        prop_assert_eq!(
            audit_verify(&path).unwrap(),
            VerifyOutcome::TamperedAt { seq: target }
        );
    }
}

/// Exhaustive first-match semantics over all 2^3 truth assignments of the
/// three atoms used by the navigation rule, cross-checked against a direct
/// truth-table evaluation.
#[test]
fn rule_evaluation_matches_truth_table_exhaustively() {
    let text = "set allow = { example.com }\n\
                deny navigate when origin_not_in(allow) and has_secret\n";
    let policy = parse_policy(text).unwrap();
    let rule_pred = &policy.rules[0].predicate;
    assert_eq!(
        *rule_pred,
        LabelPredicate::And(
            Box::new(LabelPredicate::OriginNotIn("allow".to_string())),
            Box::new(LabelPredicate::HasSecret)
        )
    );

    for bits in 0u8..8 {
        let has_secret = bits & 1 != 0;
        let has_untrusted = bits & 2 != 0;
        let target_outside = bits & 4 != 0;

        let mut labels = Vec::new();
        if has_secret {
            labels.push(TaintLabel::secret("x_username"));
        }
        if has_untrusted {
            // An untrusted origin outside the allow set.
            labels.push(TaintLabel::untrusted("evil.io"));
        }
        let url = if target_outside {
            "https://c2-demo.arimlabs.ai/x"
        } else {
            "https://example.com/x"
        };

        let mut state = TaintState::new();
        let datum = Datum::new(url, LabelSet::from_labels(labels));
        state.register(&datum);
        let action = ActionRequest::new("navigate", "s", 0).with_arg("url", url, datum);
        let verdict = check_action(&action, &state, &policy);

        // Truth table: origin_not_in(allow) is an existential over the data
        // origins plus the navigation target.
        let origin_not_in = has_untrusted || target_outside;
        let expect_deny = origin_not_in && has_secret;
        assert_eq!(
            verdict.decision,
            if expect_deny { Decision::Deny } else { Decision::Allow },
            "bits {bits:03b}: secret={has_secret} untrusted={has_untrusted} outside={target_outside}"
        );
    }
}

/// Brute-force label propagation over every trace of length <= 4 built from
/// a three-action alphabet, compared against an independently computed
/// set-union recurrence.
#[test]
fn short_traces_match_the_union_recurrence_exhaustively() {
    #[derive(Clone, Copy, Debug, PartialEq)]
    enum Step {
        ExtractFromEvil,   // output gains Untrusted(evil.io)
        CombineWithSecret, // mixes in a secret-labeled datum
        Pass,              // plain data flow
    }
    let alphabet = [Step::ExtractFromEvil, Step::CombineWithSecret, Step::Pass];

    // Every trace of length 0..=4: 1 + 3 + 9 + 27 + 81 = 121.
    let mut traces: Vec<Vec<Step>> = vec![vec![]];
    let mut frontier: Vec<Vec<Step>> = vec![vec![]];
    for _ in 0..4 {
        let mut next = Vec::new();
        for trace in &frontier {
            for step in alphabet {
                let mut extended = trace.clone();
                extended.push(step);
                next.push(extended);
            }
        }
        traces.extend(next.iter().cloned());
        frontier = next;
    }
    assert_eq!(traces.len(), 121);

    let secret = TaintLabel::secret("x_username");
    for trace in &traces {
        // Library route: chain each step's output into the next input.
        let mut state = TaintState::new();
        let seed = Datum::trusted("seed");
        state.register(&seed);
        let mut current = seed;
        // Independent route: a plain set-union recurrence.
        let mut expected: Vec<TaintLabel> = Vec::new();

        for (i, step) in trace.iter().enumerate() {
            let mut action = ActionRequest::new("extract_content", "s", i as u64).with_arg(
                "input",
                format!("content {i}"),
                current.clone(),
            );
            let mut origin = None;
            match step {
                Step::ExtractFromEvil => {
                    origin = Some("evil.io".to_string());
                    expected.push(TaintLabel::untrusted("evil.io"));
                }
                Step::CombineWithSecret => {
                    let extra = Datum::new(
                        &format!("secret input {i}"),
                        LabelSet::from_labels(vec![secret.clone()]),
                    );
                    state.register(&extra);
                    action = action.with_arg("extra", format!("secret input {i}"), extra);
                    expected.push(secret.clone());
                }
                Step::Pass => {}
            }
            let outputs = vec![StepOutput {
                content: format!("output of step {i} in {trace:?}"),
                extracted_from: origin,
            }];
            let produced = state.propagate(&action, &outputs).unwrap();
            current = produced.into_iter().next().unwrap();
        }

        let expected_set = LabelSet::from_labels(expected);
        assert_eq!(
            current.labels, expected_set,
            "trace {trace:?} diverged from the union recurrence"
        );
    }
}

/// Grammar round-trip for every committed policy file.
#[test]
fn committed_policy_files_round_trip() {
    let root = std::path::PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../..");
    let mut found = 0;
    for entry in std::fs::read_dir(root.join("corpus/policies")).unwrap() {
        let path = entry.unwrap().path();
        if path.extension().and_then(|e| e.to_str()) != Some("apol") {
            continue;
        }
        found += 1;
        let text = std::fs::read_to_string(&path).unwrap();
        let parsed = parse_policy(&text).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
        let printed = pretty_print(&parsed);
        let reparsed = parse_policy(&printed).unwrap();
        assert_eq!(parsed, reparsed, "round trip failed for {}", path.display());
    }
    assert!(found >= 1, "no committed policy files found");
}

// Random generated policies also survive the round trip.
proptest! {
    #[test]
    fn generated_policies_round_trip(
        rules in proptest::collection::vec(
            (
                prop_oneof![Just("deny"), Just("approve"), Just("allow")],
                prop_oneof![Just("send"), Just("navigate"), Just("exec"), Just("input_text")],
                prop_oneof![
                    Just("has_secret"),
                    Just("has_untrusted"),
                    Just("origin_in(grp)"),
                    Just("origin_not_in(grp)"),
                    Just("has_secret and has_untrusted"),
                    Just("not has_secret or (has_untrusted and origin_in(grp))"),
                    Just("not (has_secret and origin_not_in(grp))"),
                ],
            ),
            0..6,
        )
    ) {
        let mut text = String::from("set grp = { a.example, b.example }\n");
        for (effect, tool, pred) in &rules {
            text.push_str(&format!("{effect} {tool} when {pred}\n"));
        }
        let parsed = parse_policy(&text).unwrap();
        let printed = pretty_print(&parsed);
        let reparsed = parse_policy(&printed).unwrap();
        prop_assert_eq!(parsed, reparsed);
    }
}
