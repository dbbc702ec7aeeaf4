mod common;

use common::{alignment_tally, brute_force_align, bx, cover_document};
use groundforge::align::{align_detailed, align_metadata, AlignConfig};
use groundforge::ocr::{OcrDocument, OcrToken};

#[test]
fn title_matches_oracle() {
    let doc = cover_document();
    let oracle = brute_force_align(&doc, "BABIES COME FROM AIRPORTS", 2).unwrap();
    let got = align_detailed(&doc, "BABIES COME FROM AIRPORTS", &AlignConfig::default()).unwrap();
    assert_eq!(oracle.edits, 0);
    assert_eq!(got.tokens, oracle.tokens);
    assert_eq!(got.span.bbox().to_array(), [0.084, 0.049, 0.934, 0.298]);
}

#[test]
fn author_line_despite_typo() {
    let doc = OcrDocument {
        id: "author".into(),
        image_ref: "a.png".into(),
        width: 100,
        height: 100,
        engine: "test".into(),
        tokens: vec![
            OcrToken::new("Writien", bx(0.1, 0.8, 0.3, 0.85)),
            OcrToken::new("by", bx(0.32, 0.8, 0.38, 0.85)),
            OcrToken::new("Erin Dealey", bx(0.4, 0.8, 0.7, 0.85)),
            OcrToken::new("Illustrated", bx(0.1, 0.9, 0.4, 0.95)),
        ],
    };
    let oracle = brute_force_align(&doc, "Erin Dealey", 2).unwrap();
    assert_eq!(oracle.tokens, vec![2]);
    let span = align_metadata(&doc, "Erin Dealey", &AlignConfig::default()).unwrap();
    assert_eq!(span.bbox(), &doc.tokens[2].bbox);
}

#[test]
fn randomized_cases_agree_with_oracle() {
    let tally = alignment_tally(300, 0x5eed);
    assert!(tally.disagreements.is_empty(), "{:#?}", tally.disagreements);
    assert!(tally.eligible > 100, "too few eligible cases: {}", tally.eligible);
}
