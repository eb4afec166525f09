//! GE2E objective and the triplet baseline over a batch of embeddings.

mod ge2e;
mod triplet;

pub use ge2e::{
    centroids, centroids_graph, ge2e_graph, ge2e_loss, phrase_losses_from_scores, BatchEmbeddings, Ge2eNodes,
    Ge2eOutput,
};
pub use triplet::{sample_triplets, triplet_graph, triplet_loss, Triplet, TripletConfig};
