use std::collections::BTreeMap;

use groundforge::dataset::{
    build_detection, build_spotting, render_training_string, sanitize_conversation, ConversationTurn,
    InstructionSample, PretrainBuilder, PretrainConfig, SampleTask, SanitizeConfig, DEFAULT_BANNED_PHRASES,
};
use groundforge::dedup::{dedup, DedupEntry};
use groundforge::eval::{contains_answer, emit_overlay, evaluate, BenchmarkRecord, ModelResponse};
use groundforge::exec::Execution;
use groundforge::geometry::{format_box, iou, normalize, quantize, union, BBox, PixelRect};
use groundforge::notation::{parse_spans, serialize_span, GroundedSpan};
use groundforge::ocr::{reading_order_indices, OcrDocument, OcrToken};
use groundforge::templates::builtin_templates;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn grid_box() -> impl Strategy<Value = BBox> {
    (0u32..=1000, 0u32..=1000, 0u32..=1000, 0u32..=1000).prop_map(|(a, b, c, d)| {
        let (x0, x1) = (a.min(c), a.max(c));
        let (y0, y1) = (b.min(d), b.max(d));
        BBox::new(
            x0 as f64 / 1000.0,
            y0 as f64 / 1000.0,
            x1 as f64 / 1000.0,
            y1 as f64 / 1000.0,
        )
        .unwrap()
    })
}

fn any_box() -> impl Strategy<Value = BBox> {
    (0.0..=1.0f64, 0.0..=1.0f64, 0.0..=1.0f64, 0.0..=1.0f64)
        .prop_map(|(a, b, c, d)| BBox::new(a.min(c), b.min(d), a.max(c), b.max(d)).unwrap())
}

fn span_text() -> impl Strategy<Value = String> {
    "[^\"\r\n]{1,24}".prop_filter("blank", |s| !s.trim().is_empty())
}

fn word() -> impl Strategy<Value = String> {
    prop_oneof![
        prop::sample::select(vec!["SALE", "Open", "24h", "Exit", "Menu", "a"]).prop_map(String::from),
        "[A-Za-z0-9]{1,8}",
    ]
}

fn document() -> impl Strategy<Value = OcrDocument> {
    prop::collection::vec((word(), grid_box()), 1..12).prop_map(|toks| OcrDocument {
        id: "doc".into(),
        image_ref: "doc.png".into(),
        width: 1000,
        height: 1000,
        engine: "test".into(),
        tokens: toks.into_iter().map(|(t, b)| OcrToken::new(t, b)).collect(),
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn span_round_trip(text in span_text(), b in grid_box()) {
        let span = GroundedSpan::new(text, b).unwrap();
        let printed = serialize_span(&span).unwrap();
        let parsed = parse_spans(&printed);
        prop_assert_eq!(parsed.len(), 1);
        prop_assert_eq!(&parsed[0].span, &span);
        prop_assert_eq!(parsed[0].range.clone(), 0..printed.len());
        prop_assert_eq!(parsed[0].span.bbox().to_array(), b.to_array());
    }

    #[test]
    fn quantize_is_idempotent(b in any_box()) {
        let q = quantize(b);
        prop_assert!(q.is_quantized());
        prop_assert_eq!(quantize(q), q);
    }

    #[test]
    fn union_contains_inputs(boxes in prop::collection::vec(any_box(), 1..8)) {
        let u = union(&boxes).unwrap();
        for b in &boxes {
            prop_assert!(u.contains(b));
        }
        let mut rev = boxes.clone();
        rev.reverse();
        prop_assert_eq!(union(&rev).unwrap(), u);
        prop_assert_eq!(union(&boxes[..1]).unwrap(), boxes[0]);
    }

    #[test]
    fn iou_is_symmetric_and_bounded(a in any_box(), b in any_box()) {
        let v = iou(&a, &b);
        prop_assert!((0.0..=1.0).contains(&v));
        prop_assert_eq!(v, iou(&b, &a));
        if a.width() > 0.0 && a.height() > 0.0 {
            prop_assert_eq!(iou(&a, &a), 1.0);
        }
    }

    #[test]
    fn normalize_stays_in_bounds(w in 1u32..5000, h in 1u32..5000, f in prop::array::uniform4(0.0..=1.0f64)) {
        let (w, h) = (w as f64, h as f64);
        let (l, r) = ((f[0] * w).floor(), (f[2] * w).floor());
        let (t, bot) = ((f[1] * h).floor(), (f[3] * h).floor());
        let px = PixelRect::new(l.min(r), t.min(bot), l.max(r), t.max(bot));
        let b = normalize(px, w, h).unwrap();
        prop_assert!(b.is_quantized());
        prop_assert!(b.x_min() <= b.x_max() && b.y_min() <= b.y_max());
        prop_assert!(b.x_min() >= 0.0 && b.y_max() <= 1.0);
    }

    #[test]
    fn reading_order_is_a_permutation(doc in document()) {
        let mut order = reading_order_indices(&doc.tokens, 0.5);
        order.sort_unstable();
        prop_assert_eq!(order, (0..doc.tokens.len()).collect::<Vec<_>>());
    }

    #[test]
    fn dedup_partitions_and_is_idempotent(digests in prop::collection::vec(0u8..6, 0..30)) {
        let entries: Vec<DedupEntry> = digests
            .iter()
            .enumerate()
            .map(|(i, d)| DedupEntry { id: format!("e{i}"), digest: format!("d{d}"), image_ref: format!("{i}.png") })
            .collect();
        let m = dedup(entries.clone()).unwrap();
        prop_assert_eq!(m.unique_ids.len() + m.dropped.len(), entries.len());
        let retained: Vec<DedupEntry> = entries.iter().filter(|e| m.is_kept(&e.id)).cloned().collect();
        let mut seen = std::collections::HashSet::new();
        prop_assert!(retained.iter().all(|e| seen.insert(e.digest.clone())));
        let again = dedup(retained).unwrap();
        prop_assert_eq!(again.unique_ids, m.unique_ids);
    }

    #[test]
    fn detection_and_spotting_answers_reparse_to_tokens(doc in document(), seed in any::<u64>()) {
        let templates = builtin_templates();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let tokens: Vec<(String, BBox)> = doc.tokens.iter().map(|t| (t.text.clone(), t.bbox)).collect();

        let spot = build_spotting(&doc, &templates, &mut rng, 0.5).unwrap();
        let mut got: Vec<(String, [i64; 4])> = parse_spans(&spot.turns[1].text)
            .into_iter()
            .map(|p| (p.span.text().to_string(), p.span.bbox().to_milli()))
            .collect();
        let mut want: Vec<(String, [i64; 4])> = tokens.iter().map(|(t, b)| (t.clone(), b.to_milli())).collect();
        got.sort();
        want.sort();
        prop_assert_eq!(got, want);

        for s in build_detection(&doc, &templates, &mut rng, None, 0.5).unwrap() {
            let spans = parse_spans(&s.turns[1].text);
            let text = spans[0].span.text().to_string();
            prop_assert!(s.turns[0].text.contains(&text));
            let mut got: Vec<[i64; 4]> = spans.iter().map(|p| { assert_eq!(p.span.text(), text); p.span.bbox().to_milli() }).collect();
            let mut want: Vec<[i64; 4]> = tokens.iter().filter(|(t, _)| *t == text).map(|(_, b)| b.to_milli()).collect();
            got.sort();
            want.sort();
            prop_assert_eq!(got, want);
        }
    }

    #[test]
    fn pretrain_is_independent_of_execution(docs in prop::collection::vec(document(), 1..6), seed in any::<u64>()) {
        let docs: Vec<OcrDocument> = docs.into_iter().enumerate().map(|(i, mut d)| { d.id = format!("doc{i}"); d }).collect();
        let templates = builtin_templates();
        let builder = PretrainBuilder::new(&templates, PretrainConfig { seed, ..PretrainConfig::default() });
        let par = builder.build_batch(&docs, Execution::Parallel);
        prop_assert_eq!(&par, &builder.build_batch(&docs, Execution::Sequential));
        prop_assert_eq!(par, builder.stream(&docs).collect::<Vec<_>>());
    }
}

fn casing(s: &str, mask: &[bool]) -> String {
    s.chars()
        .zip(mask.iter().cycle())
        .map(|(c, up)| if *up { c.to_ascii_uppercase() } else { c.to_ascii_lowercase() })
        .collect()
}

fn turn_text() -> impl Strategy<Value = String> {
    let banned = prop::sample::select(DEFAULT_BANNED_PHRASES.to_vec());
    let piece = prop_oneof![
        (banned, prop::collection::vec(any::<bool>(), 1..8)).prop_map(|(p, m)| casing(p, &m)),
        "[a-z]{1,6}".prop_map(String::from),
        Just(",".to_string()),
        grid_box().prop_map(|b| format!("\"X\"{}", format_box(&b))),
    ];
    prop::collection::vec(piece, 0..8).prop_map(|p| p.join(" "))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn sanitize_shrinks_and_removes_phrases(doc in document(), texts in prop::collection::vec(turn_text(), 1..4)) {
        let mut turns = Vec::new();
        for (i, t) in texts.iter().enumerate() {
            turns.push(ConversationTurn::user(format!("q{i} {t}")));
            turns.push(ConversationTurn::assistant(t.clone()));
        }
        let conv = InstructionSample { id: "c".into(), image_ref: "doc.png".into(), task: SampleTask::Conversation, turns };
        let (out, report) = sanitize_conversation(&conv, &[doc], &SanitizeConfig::default()).unwrap();
        prop_assert!(out.turns.len() <= conv.turns.len());
        prop_assert_eq!(report.kept, !out.turns.is_empty());
        for t in &out.turns {
            let lower = t.text.to_lowercase();
            for p in DEFAULT_BANNED_PHRASES {
                prop_assert!(!lower.contains(p), "{:?} still in {:?}", p, t.text);
            }
        }
    }

    #[test]
    fn rendering_has_one_image_and_alternates(texts in prop::collection::vec(("[a-z ]{0,12}", "[a-z ]{0,12}"), 1..5)) {
        let turns = texts.iter().flat_map(|(q, a)| [ConversationTurn::user(q.clone()), ConversationTurn::assistant(a.clone())]).collect();
        let s = InstructionSample { id: "c".into(), image_ref: "i".into(), task: SampleTask::Conversation, turns };
        let r = render_training_string(&s);
        prop_assert_eq!(r.matches("<image>").count(), 1);
        let markers: Vec<&str> = r.match_indices(" USER: ").map(|(i, _)| (i, "U"))
            .chain(r.match_indices(" ASSISTANT: ").map(|(i, _)| (i, "A")))
            .collect::<BTreeMap<_, _>>()
            .into_values()
            .collect();
        let expected: Vec<&str> = (0..texts.len()).flat_map(|_| ["U", "A"]).collect();
        prop_assert_eq!(markers, expected);
    }

    #[test]
    fn containment_ignores_case_and_edge_punctuation(
        answer in "[a-z0-9]{1,6}( [a-z0-9]{1,6}){0,2}",
        filler in "[a-z ]{0,10}",
        mask in prop::collection::vec(any::<bool>(), 1..6),
        wrap in prop::sample::select(vec![("", ""), ("\"", "\""), ("(", ")."), ("'", "'?"), ("[", "]")]),
    ) {
        let resp = format!("{filler} {answer} end");
        let base = contains_answer(&resp, std::slice::from_ref(&answer));
        prop_assert!(base);
        let decorated_answer = format!("{}{}{}", wrap.0, casing(&answer, &mask), wrap.1);
        prop_assert_eq!(contains_answer(&resp, &[decorated_answer]), base);
        let decorated_resp = format!("{filler} {}{}{} end", wrap.0, casing(&answer, &mask), wrap.1);
        prop_assert_eq!(contains_answer(&decorated_resp, &[answer]), base);
    }

    #[test]
    fn accuracy_is_order_free_and_monotone(
        hits in prop::collection::vec(prop::option::of(any::<bool>()), 1..15),
        shuffle_seed in any::<u64>(),
    ) {
        let bench: Vec<BenchmarkRecord> = (0..hits.len())
            .map(|i| BenchmarkRecord {
                qid: format!("q{i:02}"),
                image_ref: "i.png".into(),
                question: "q".into(),
                answers: vec![format!("answer{i}")],
                gt_boxes: None,
                image_width: None,
                image_height: None,
            })
            .collect();
        let responses: Vec<ModelResponse> = hits
            .iter()
            .enumerate()
            .filter_map(|(i, h)| h.map(|hit| ModelResponse {
                qid: format!("q{i:02}"),
                response: if hit { format!("it is answer{i}.") } else { "unknown".into() },
            }))
            .collect();
        let report = evaluate(&bench, &responses, Execution::Sequential).unwrap();
        let agg = &report.aggregate;
        prop_assert_eq!(agg.correct + agg.incorrect, bench.len());
        prop_assert_eq!(agg.correct, hits.iter().filter(|h| **h == Some(true)).count());

        let mut shuffled = responses.clone();
        use rand::seq::SliceRandom;
        shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(shuffle_seed));
        prop_assert_eq!(&evaluate(&bench, &shuffled, Execution::Parallel).unwrap(), &report);

        if let Some(pos) = responses.iter().position(|r| r.response == "unknown") {
            let mut better = responses.clone();
            let i: usize = better[pos].qid[1..].parse().unwrap();
            better[pos].response = format!("answer{i}");
            let improved = evaluate(&bench, &better, Execution::Sequential).unwrap();
            prop_assert!(improved.aggregate.accuracy >= agg.accuracy);
        }
    }

    #[test]
    fn overlay_rectangles_renormalize(b in grid_box(), w in 1u32..4000, h in 1u32..4000) {
        let span = GroundedSpan::new("t", b).unwrap();
        let svg = emit_overlay("i.png", w, h, &[span], None).unwrap();
        let doc = roxmltree::Document::parse(&svg).unwrap();
        let rect = doc.descendants().find(|n| n.has_tag_name("rect")).unwrap();
        let num = |k: &str| rect.attribute(k).unwrap().parse::<f64>().unwrap();
        let (x, y, rw, rh) = (num("x"), num("y"), num("width"), num("height"));
        let (wf, hf) = (w as f64, h as f64);
        prop_assert!((x / wf - b.x_min()).abs() <= 1.0 / wf);
        prop_assert!((y / hf - b.y_min()).abs() <= 1.0 / hf);
        prop_assert!(((x + rw) / wf - b.x_max()).abs() <= 1.0 / wf);
        prop_assert!(((y + rh) / hf - b.y_max()).abs() <= 1.0 / hf);
    }
}
