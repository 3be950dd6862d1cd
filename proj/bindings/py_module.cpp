#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "trackrank/config.hpp"
#include "trackrank/gradsuite.hpp"

namespace py = pybind11;
using namespace trackrank;

namespace {

using Matrix = std::vector<std::vector<double>>;

Tensor matrix_tensor(const Matrix& m, const std::string& what) {
    if (m.empty()) throw ShapeError(what + ": matrix must be non-empty");
    const int64_t rows = static_cast<int64_t>(m.size());
    const int64_t cols = static_cast<int64_t>(m[0].size());
    std::vector<double> flat;
    flat.reserve(static_cast<size_t>(rows * cols));
    for (const auto& row : m) {
        if (static_cast<int64_t>(row.size()) != cols) throw ShapeError(what + ": ragged matrix");
        flat.insert(flat.end(), row.begin(), row.end());
    }
    return Tensor::from({rows, cols}, std::move(flat));
}

Matrix tensor_matrix(const Tensor& t) {
    Matrix out(static_cast<size_t>(t.dim(0)), std::vector<double>(static_cast<size_t>(t.dim(1))));
    const auto& v = t.value();
    for (size_t i = 0; i < out.size(); ++i)
        for (size_t j = 0; j < out[i].size(); ++j) out[i][j] = v[i * out[i].size() + j];
    return out;
}

// one encoder held across calls so repeated clips share parameters
struct PyEncoder {
    ClipEncoder encoder;
    PyEncoder(const std::string& head, int64_t dim, int64_t embed_dim, const std::string& embed_init,
              uint64_t seed)
        : encoder(make(head, dim, embed_dim, embed_init, seed)) {}

    static ClipEncoder make(const std::string& head, int64_t dim, int64_t embed_dim,
                            const std::string& embed_init, uint64_t seed) {
        EmbedConfig embed;
        embed.dim = embed_dim;
        if (embed_init == "zero_final")
            embed.init = EmbedInit::zero_final;
        else if (embed_init == "random")
            embed.init = EmbedInit::random;
        else
            throw ShapeError("Encoder: embed_init must be 'zero_final' or 'random'");
        auto rng = seeded_engine(seed, 999);
        return ClipEncoder(head_config_from_name(expand_head_name(head)), embed, FrameLayout{1, 1, dim}, rng);
    }

    std::vector<double> encode(const Matrix& frames) const {
        const Tensor clip = matrix_tensor(frames, "encode");
        return encoder.encode(FeatureClip{clip, false}).value();
    }
};

double py_triplet(const Matrix& embeddings, const std::vector<int>& identities, double margin,
                  const std::string& reduction) {
    LabeledBatch batch;
    batch.embeddings = matrix_tensor(embeddings, "triplet_loss");
    batch.identities = identities;
    TripletConfig cfg;
    cfg.margin = margin;
    if (reduction == "mean")
        cfg.reduction = Reduction::mean;
    else if (reduction == "sum")
        cfg.reduction = Reduction::sum;
    else
        throw ShapeError("triplet_loss: reduction must be 'mean' or 'sum'");
    return batch_hard_triplet(batch, cfg).item();
}

py::dict py_evaluate(const Matrix& distances, const std::vector<int>& query_ids,
                     const std::vector<int>& query_cams, const std::vector<int>& gallery_ids,
                     const std::vector<int>& gallery_cams, const std::vector<int>& ranks) {
    const RetrievalResult res =
        evaluate(matrix_tensor(distances, "evaluate"), query_ids, query_cams, gallery_ids, gallery_cams);
    py::dict cmc;
    const int64_t G = static_cast<int64_t>(res.cmc.size());
    for (const int r : ranks) {
        if (r < 1) throw ShapeError("evaluate: ranks must be >= 1");
        cmc[py::str(std::to_string(r))] = res.cmc[static_cast<size_t>(std::min<int64_t>(r, G) - 1)];
    }
    py::dict out;
    out["map"] = res.map;
    out["cmc"] = cmc;
    out["num_valid_queries"] = res.num_valid_queries;
    out["num_skipped_queries"] = res.num_skipped_queries;
    return out;
}

Matrix py_rerank(const Matrix& qg, const Matrix& gg, const Matrix& qq, int64_t k1, int64_t k2, double lambda) {
    RerankConfig cfg;
    cfg.k1 = k1;
    cfg.k2 = k2;
    cfg.lambda = lambda;
    return tensor_matrix(rerank(matrix_tensor(qg, "rerank"), matrix_tensor(gg, "rerank"),
                                matrix_tensor(qq, "rerank"), cfg));
}

py::list py_gradcheck(const std::vector<std::string>& heads, int seeds, double tolerance) {
    py::list rows;
    for (const auto& r : run_gradsuite(heads, seeds, tolerance)) {
        py::dict d;
        d["head"] = r.head;
        d["loss"] = r.loss;
        d["max_rel_err"] = r.max_rel_err;
        d["pass"] = r.pass;
        rows.append(d);
    }
    return rows;
}

}  // namespace

PYBIND11_MODULE(trackrank, m) {
    m.doc() = "temporal feature aggregation for video re-id: encoding, losses, retrieval";

    m.def("head_names", [] { return all_head_names(); }, "the ten canonical temporal head names");

    py::class_<PyEncoder>(m, "Encoder", "clip encoder: frames [T x dim] -> embedding")
        .def(py::init<const std::string&, int64_t, int64_t, const std::string&, uint64_t>(), py::arg("head"),
             py::arg("dim"), py::arg("embed_dim") = 64, py::arg("embed_init") = "zero_final",
             py::arg("seed") = 0)
        .def("encode", &PyEncoder::encode, py::arg("frames"))
        .def_property_readonly("out_dim", [](const PyEncoder& e) { return e.encoder.out_dim; });

    m.def("triplet_loss", &py_triplet, py::arg("embeddings"), py::arg("identities"), py::arg("margin") = 0.3,
          py::arg("reduction") = "mean", "batch-hard triplet loss over an [N x D] embedding matrix");

    m.def("evaluate", &py_evaluate, py::arg("distances"), py::arg("query_ids"), py::arg("query_cams"),
          py::arg("gallery_ids"), py::arg("gallery_cams"),
          py::arg("ranks") = std::vector<int>{1, 5, 10, 20},
          "mAP/CMC with same-identity same-camera exclusion");

    m.def("rerank", &py_rerank, py::arg("query_gallery"), py::arg("gallery_gallery"), py::arg("query_query"),
          py::arg("k1") = 20, py::arg("k2") = 6, py::arg("lambda_") = 0.3,
          "k-reciprocal re-ranking of a query-gallery distance matrix");

    m.def("gradcheck", &py_gradcheck, py::arg("heads"), py::arg("seeds") = 1, py::arg("tolerance") = 1e-4,
          "finite-difference gradient checks; one row per (head, loss)");

    py::register_exception<ShapeError>(m, "ShapeError");
    py::register_exception<NumericError>(m, "NumericError");
    py::register_exception<IoError>(m, "IoError");
}
