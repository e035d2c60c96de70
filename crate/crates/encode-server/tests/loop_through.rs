use std::sync::Arc;
use std::time::Duration;

use vidgen_curation::Aspect;
use vidgen_encode::{
    toy_dit_config, write_spool, BatchBuffer, BatchService, BatchSource, BufferConfig, Dataset, FeatureTrainer,
    LocalSource, RemoteSource, Server, ServerOptions, ServiceConfig, SpoolSource,
};

const STEPS: u64 = 6;

fn service() -> Arc<BatchService> {
    let ds = Dataset::synthetic(&[(Aspect::Square, 1), (Aspect::W3H2, 1)], 4, 31).unwrap();
    Arc::new(BatchService::new(Arc::new(ds), ServiceConfig { seed: 77, text_dim: 6, ..Default::default() }).unwrap())
}

fn run(source: Box<dyn BatchSource>, rank: u32) -> Vec<f64> {
    let buf = BatchBuffer::start(source, BufferConfig::new(rank, 2)).unwrap();
    let mut t = FeatureTrainer::new(toy_dit_config(6), 3, 1e-3).unwrap();
    (0..STEPS).map(|s| t.step(&buf.pop(s).unwrap()).unwrap()).collect()
}

#[test]
fn server_and_spool_reproduce_local_losses() {
    let svc = service();
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(write_spool(&svc, dir.path(), 0..STEPS).unwrap(), 2 * STEPS as usize);
    let server = Server::bind("127.0.0.1:0", svc.clone(), ServerOptions::default()).unwrap();
    for rank in 0..2 {
        let local = run(Box::new(LocalSource(svc.clone())), rank);
        assert!(local.iter().all(|l| l.is_finite()));
        let remote = run(Box::new(RemoteSource::connect(server.local_addr(), Duration::from_secs(30)).unwrap()), rank);
        let spool = run(Box::new(SpoolSource { dir: dir.path().to_path_buf() }), rank);
        let bits = |v: &[f64]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&remote), bits(&local), "rank {rank}");
        assert_eq!(bits(&spool), bits(&local), "rank {rank}");
    }
}

#[test]
fn missing_spool_file_fails_the_pop() {
    let dir = tempfile::tempdir().unwrap();
    write_spool(&service(), dir.path(), 0..1).unwrap();
    let buf = BatchBuffer::start(Box::new(SpoolSource { dir: dir.path().to_path_buf() }), BufferConfig::new(0, 2)).unwrap();
    assert!(buf.pop(0).is_ok());
    assert!(matches!(buf.pop(1), Err(vidgen_encode::Error::Source(_))));
}
