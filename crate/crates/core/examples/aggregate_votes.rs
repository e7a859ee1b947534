//! Turns raw tagger votes into label distributions.

use crowdfer::{EmotionSet, VoteCounts};

fn main() -> crowdfer::Result<()> {
    let emotions = EmotionSet::ferplus();
    let rows: [&[u32]; 3] = [
        &[7, 1, 2, 0, 0, 0, 0, 0],
        &[0, 4, 4, 1, 0, 0, 1, 0],
        &[1, 1, 1, 1, 1, 1, 1, 1],
    ];
    for votes in rows {
        let counts = VoteCounts::from_counts(votes.to_vec());
        match counts.reject_outliers(1) {
            Ok(kept) => {
                let dist = kept.normalize()?;
                let shown: Vec<String> = dist.probs().iter().map(|p| format!("{p:.3}")).collect();
                println!(
                    "{votes:?} -> [{}], majority {}",
                    shown.join(", "),
                    emotions.names()[dist.majority_class()]
                );
            }
            Err(e) => println!("{votes:?} -> dropped ({e})"),
        }
    }
    Ok(())
}
