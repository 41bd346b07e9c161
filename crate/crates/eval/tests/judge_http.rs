use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;
use std::thread;
use std::time::Duration;

use dualfuse_eval::{EvalRecord, HttpJudge};

/// Serves `(status, body)` answers produced by `reply` for each request
/// body, one request per connection.
fn serve(
    reply: impl Fn(usize, &serde_json::Value) -> (u16, String) + Send + 'static,
) -> (String, Arc<AtomicUsize>) {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!("http://{}/score", listener.local_addr().unwrap());
    let hits = Arc::new(AtomicUsize::new(0));
    let counter = hits.clone();
    thread::spawn(move || {
        for stream in listener.incoming() {
            let mut stream = stream.unwrap();
            let mut reader = BufReader::new(stream.try_clone().unwrap());
            let mut len = 0;
            loop {
                let mut line = String::new();
                reader.read_line(&mut line).unwrap();
                if line == "\r\n" || line.is_empty() {
                    break;
                }
                if let Some(v) = line.to_ascii_lowercase().strip_prefix("content-length:") {
                    len = v.trim().parse().unwrap();
                }
            }
            let mut body = vec![0; len];
            reader.read_exact(&mut body).unwrap();
            let request: serde_json::Value = serde_json::from_slice(&body).unwrap();
            let n = counter.fetch_add(1, Ordering::SeqCst);
            let (status, out) = reply(n, &request);
            let resp = format!(
                "HTTP/1.1 {status} X\r\ncontent-type: application/json\r\ncontent-length: {}\r\nconnection: close\r\n\r\n{out}",
                out.len()
            );
            stream.write_all(resp.as_bytes()).unwrap();
        }
    });
    (url, hits)
}

fn records(n: usize) -> Vec<EvalRecord> {
    (0..n)
        .map(|i| EvalRecord {
            config_id: 0,
            question_id: format!("q{i}"),
            question: "q".into(),
            answer: format!("answer {i}"),
            references: ["r1".into(), "r2".into()],
            rouge: 0.0,
            judge_scores: vec![],
            judge_max: None,
            error: None,
            judge_error: None,
        })
        .collect()
}

fn judge(url: String) -> HttpJudge {
    HttpJudge {
        timeout: Duration::from_secs(5),
        max_retries: 2,
        backoff: Duration::from_millis(10),
        batch_size: 2,
        ..HttpJudge::new(url)
    }
}

#[test]
fn scores_batches_and_takes_max() {
    let (url, hits) = serve(|_, req| {
        let items = req["items"].as_array().unwrap();
        let scores: Vec<f64> = items
            .iter()
            .map(|it| {
                if it["reference_index"] == 1 {
                    0.25
                } else {
                    0.75
                }
            })
            .collect();
        (200, serde_json::json!({ "scores": scores }).to_string())
    });
    let mut rs = records(3);
    let report = judge(url).score(&mut rs);
    assert_eq!(report.scored, 3);
    assert_eq!(hits.load(Ordering::SeqCst), 2);
    assert!(rs
        .iter()
        .all(|r| r.judge_max == Some(0.75) && r.judge_scores == [0.25, 0.75]));
}

#[test]
fn out_of_range_score_is_a_record_error() {
    let (url, _) = serve(|_, _| (200, r#"{"scores":[1.3, 0.5, 0.5, 0.5]}"#.into()));
    let mut rs = records(2);
    let report = judge(url).score(&mut rs);
    assert_eq!((report.scored, report.invalid), (1, 1));
    assert!(rs[0].judge_error.as_deref().unwrap().contains("1.3"));
    assert_eq!(rs[1].judge_max, Some(0.5));
}

#[test]
fn retries_server_errors() {
    let (url, hits) = serve(|n, _| {
        if n < 2 {
            (503, "{}".into())
        } else {
            (200, r#"{"scores":[0.1, 0.9]}"#.into())
        }
    });
    let mut rs = records(1);
    let report = judge(url).score(&mut rs);
    assert_eq!(report.scored, 1);
    assert_eq!(hits.load(Ordering::SeqCst), 3);
}

#[test]
fn unreachable_leaves_records_unscored() {
    let addr = {
        let l = TcpListener::bind("127.0.0.1:0").unwrap();
        l.local_addr().unwrap()
    };
    let mut rs = records(3);
    let report = judge(format!("http://{addr}/score")).score(&mut rs);
    assert_eq!(report.unscored, 3);
    assert_eq!(report.unreachable_batches, 2);
    assert!(report.last_network_error.is_some());
    assert!(rs.iter().all(|r| r.judge_max.is_none()));
}
