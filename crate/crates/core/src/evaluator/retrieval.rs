//! Top-K retrieval tables and image grids.

use image::{Rgb, RgbImage};

use super::metrics::RankingResult;
use crate::datamodel::gallery::QueryGallery;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct RetrievalHit {
    pub rank: usize,
    pub gallery_id: i64,
    pub gallery_key: String,
    /// `1 − distance`, i.e. cosine similarity.
    pub score: f64,
    pub correct: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RetrievalRow {
    pub query_index: usize,
    pub query_key: String,
    pub query_id: i64,
    pub hits: Vec<RetrievalHit>,
}

/// Top-`top_k` gallery entries per query.
pub fn retrieval_rows(qg: &QueryGallery, rankings: &[RankingResult], top_k: usize) -> Result<Vec<RetrievalRow>> {
    if top_k == 0 {
        return Err(Error::config("top_k must be at least 1"));
    }
    if rankings.len() != qg.queries.len() {
        return Err(Error::contract("one ranking per query is required"));
    }
    Ok(rankings
        .iter()
        .enumerate()
        .map(|(qi, r)| RetrievalRow {
            query_index: qi,
            query_key: qg.queries[qi].key.clone(),
            query_id: r.query_id,
            hits: (0..top_k.min(r.ranked_index.len()))
                .map(|i| RetrievalHit {
                    rank: i + 1,
                    gallery_id: r.ranked_ids[i],
                    gallery_key: qg.gallery[r.ranked_index[i]].key.clone(),
                    score: 1.0 - r.distances[i],
                    correct: r.ranked_ids[i] == r.query_id,
                })
                .collect(),
        })
        .collect())
}

/// Tab-separated table, one line per (query, hit).
pub fn retrieval_table(rows: &[RetrievalRow]) -> String {
    let mut out = String::from("query_key\tquery_id\trank\tgallery_id\tgallery_key\tscore\tcorrect\n");
    for row in rows {
        for h in &row.hits {
            out.push_str(&format!(
                "{}\t{}\t{}\t{}\t{}\t{:.6}\t{}\n",
                row.query_key, row.query_id, h.rank, h.gallery_id, h.gallery_key, h.score, h.correct
            ));
        }
    }
    out
}

const BORDER: u32 = 3;
const QUERY_COLOUR: Rgb<u8> = Rgb([40, 90, 220]);
const HIT_COLOUR: Rgb<u8> = Rgb([30, 180, 60]);
const MISS_COLOUR: Rgb<u8> = Rgb([200, 40, 40]);

/// One row per query: the query tile followed by its hits. Borders mark the
/// query (blue), correct matches (green) and wrong ones (red).
pub fn retrieval_grid(qg: &QueryGallery, rows: &[RetrievalRow], tile: u32) -> Result<RgbImage> {
    let cols = 1 + rows.iter().map(|r| r.hits.len()).max().unwrap_or(0) as u32;
    let cell = tile + 2 * BORDER;
    let mut grid = RgbImage::from_pixel(cols * cell, rows.len().max(1) as u32 * cell, Rgb([255, 255, 255]));
    for (y, row) in rows.iter().enumerate() {
        let query = qg.queries[row.query_index].image.load(Some(tile as usize))?;
        paste(&mut grid, &query.to_rgb8(), 0, y as u32 * cell, QUERY_COLOUR);
        for (x, hit) in row.hits.iter().enumerate() {
            let g = qg
                .gallery
                .iter()
                .find(|r| r.key == hit.gallery_key)
                .ok_or_else(|| Error::contract(format!("gallery entry `{}` not found", hit.gallery_key)))?;
            let img = g.image.load(Some(tile as usize))?;
            let colour = if hit.correct { HIT_COLOUR } else { MISS_COLOUR };
            paste(&mut grid, &img.to_rgb8(), (x as u32 + 1) * cell, y as u32 * cell, colour);
        }
    }
    Ok(grid)
}

fn paste(dst: &mut RgbImage, src: &RgbImage, x0: u32, y0: u32, border: Rgb<u8>) {
    let (w, h) = (src.width() + 2 * BORDER, src.height() + 2 * BORDER);
    for y in 0..h {
        for x in 0..w {
            let inside = x >= BORDER && y >= BORDER && x < w - BORDER && y < h - BORDER;
            let px = if inside { *src.get_pixel(x - BORDER, y - BORDER) } else { border };
            dst.put_pixel(x0 + x, y0 + y, px);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datamodel::labels::{DamageLabels, Domain, Phase, Split};
    use crate::datamodel::record::{ImageRef, SampleRecord};
    use crate::evaluator::metrics::rank_from_distances;
    use crate::imageio::FloatImage;
    use crate::synthgen::damage::Dirt;
    use std::sync::Arc;

    fn rec(id: i64, phase: Phase) -> SampleRecord {
        SampleRecord {
            image: ImageRef::Memory(Arc::new(FloatImage::filled(8, 8, [id as f32 / 10.0, 0.2, 0.3]))),
            key: format!("{id}_{}", phase.as_str()),
            instance_id: id,
            model: Some("m".into()),
            phase,
            labels: DamageLabels::default(),
            dirt: Dirt::None,
            view_index: 0,
            background_index: 0,
            render_index: 0,
            domain: Domain::Synthetic,
            split: Split::Val,
        }
    }

    fn setup() -> (QueryGallery, Vec<RankingResult>) {
        let qg = QueryGallery {
            queries: vec![rec(3, Phase::After)],
            gallery: (1..=7).map(|i| rec(i, Phase::Before)).collect(),
            excluded_ids: vec![],
        };
        let d = vec![vec![0.5, 0.1, 0.3, 0.6, 0.7, 0.8, 0.2]];
        let r = rank_from_distances(&d, &[3], &(1..=7).collect::<Vec<_>>()).unwrap();
        (qg, r)
    }

    #[test]
    fn correct_match_flagged_at_its_rank() {
        let (qg, r) = setup();
        let rows = retrieval_rows(&qg, &r, 5).unwrap();
        let flags: Vec<bool> = rows[0].hits.iter().map(|h| h.correct).collect();
        assert_eq!(flags, vec![false, false, true, false, false]);
        for (h, d) in rows[0].hits.iter().zip(&r[0].distances) {
            assert_eq!(h.score, 1.0 - d);
        }
        assert_eq!(retrieval_table(&rows).lines().count(), 6);
    }

    #[test]
    fn grid_shape() {
        let (qg, r) = setup();
        let rows = retrieval_rows(&qg, &r, 5).unwrap();
        let g = retrieval_grid(&qg, &rows, 10).unwrap();
        assert_eq!(g.width(), 6 * 16);
        assert_eq!(g.height(), 16);
        let rows = retrieval_rows(&qg, &r, 1).unwrap();
        assert_eq!(retrieval_grid(&qg, &rows, 10).unwrap().width(), 2 * 16);
    }
}
