#include "scvae/cli.hpp"

#include <CLI11.hpp>

#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>

#include "scvae/corpus.hpp"
#include "scvae/dataset.hpp"
#include "scvae/image_io.hpp"
#include "scvae/metrics.hpp"
#include "scvae/rng.hpp"
#include "scvae/segmentation.hpp"
#include "scvae/trainer.hpp"

namespace scvae {

namespace {

namespace fs = std::filesystem;

std::string fmt(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.6f", v);
    return buf;
}

LoadedModel load_model(const std::string& ckpt_path) { return model_from_checkpoint(load_checkpoint(ckpt_path)); }

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream f(path, std::ios::trunc | std::ios::binary);
    if (!f) throw IoError("cannot open " + path.string() + " for writing");
    f << text;
}

std::string stem_of(const std::string& filename) { return fs::path(filename).stem().string(); }

// Per-image metric rows shared by `reconstruct` and `eval`.
struct EvalRow {
    std::string name;
    double psnr_db, ssim_v, hoyer;
};

EvalRow eval_one(const Model& model, const std::string& name, const Tensor& image_f64, Tensor* recon_out) {
    Tensor input = image_f64.astype(model.dtype);
    ForwardResult fr = model_forward(nullptr, const_cast<Model&>(model), input);
    Tensor recon = fr.reconstruction;  // 1 x C x H x W
    Tensor recon_img({image_f64.dim(0), image_f64.dim(1), image_f64.dim(2)}, Dtype::F64);
    for (std::int64_t i = 0; i < recon_img.numel(); ++i) {
        recon_img.set(i, std::min(1.0, std::max(0.0, recon.at(i))));
    }
    if (recon_out) *recon_out = recon_img;
    EvalRow row;
    row.name = name;
    row.psnr_db = psnr(recon_img, image_f64, 1.0);
    row.ssim_v = ssim(recon_img, image_f64, 1.0);
    row.hoyer = fr.loss.report.sparsity_hoyer;
    return row;
}

std::string rows_to_csv(const std::vector<EvalRow>& rows) {
    std::ostringstream os;
    os << "filename,psnr,ssim,hoyer\n";
    double sp = 0, ss = 0, sh = 0;
    for (const EvalRow& r : rows) {
        os << r.name << "," << fmt(r.psnr_db) << "," << fmt(r.ssim_v) << "," << fmt(r.hoyer) << "\n";
        sp += r.psnr_db;
        ss += r.ssim_v;
        sh += r.hoyer;
    }
    const double n = static_cast<double>(rows.size());
    os << "mean," << fmt(sp / n) << "," << fmt(ss / n) << "," << fmt(sh / n) << "\n";
    return os.str();
}

// ---- subcommand bodies ----

void cmd_make_dict(int n, int atoms, const std::string& out) {
    Dictionary dict = build_dct_dictionary(n, atoms);
    Checkpoint ck;
    ck.tensors["dictionary.atoms"] = dict.atoms;
    ck.set_scalar("dictionary.lipschitz", dict.lipschitz_bound);
    save_checkpoint(ck, out);
    std::cout << "dictionary " << n << "x" << atoms << " L=" << fmt(dict.lipschitz_bound) << " -> " << out << "\n";
}

void cmd_train(const std::string& config_path, const std::string& data_override, const std::string& out_dir,
               const std::string& resume_path, std::int64_t seed_override) {
    TrainConfig cfg = parse_train_config(config_path);
    if (!data_override.empty()) cfg.data_dir = data_override;
    if (seed_override >= 0) cfg.seed = static_cast<std::uint64_t>(seed_override);
    fs::create_directories(out_dir);
    std::optional<Checkpoint> resume;
    if (!resume_path.empty()) resume = load_checkpoint(resume_path);
    TrainResult result = train(cfg, resume, out_dir);
    for (std::size_t i = 0; i < result.epoch_reports.size(); ++i) {
        const LossReport& r = result.epoch_reports[i];
        std::cout << "epoch " << i << " total " << fmt(r.total) << " rec " << fmt(r.rec) << " latent "
                  << fmt(r.latent) << " hoyer " << fmt(r.sparsity_hoyer) << "\n";
    }
    std::cout << "wrote " << (fs::path(out_dir) / "best.scvk").string() << ", "
              << (fs::path(out_dir) / "last.scvk").string() << ", "
              << (fs::path(out_dir) / "losses.csv").string() << "\n";
}

void cmd_encode(const std::string& ckpt, const std::string& in_dir, const std::string& out_dir) {
    LoadedModel lm = load_model(ckpt);
    Dataset ds = load_dataset(in_dir, lm.cfg.model.image_size, lm.cfg.model.channels);
    fs::create_directories(out_dir);
    std::ostringstream os;
    os << "filename,hoyer\n";
    for (std::size_t i = 0; i < ds.images.size(); ++i) {
        LatentGrid grid = encode(lm.cfg.model, lm.model.weights, ds.images[i].astype(lm.model.dtype));
        grid = sparse_code_grid(grid, lm.model.weights.lista);
        Checkpoint ck;
        ck.tensors["latent.values"] = grid.values.clone();
        ck.tensors["latent.codes"] = grid.codes.clone();
        save_checkpoint(ck, fs::path(out_dir) / (stem_of(ds.names[i]) + ".codes.scvk"));
        Tensor rows = ops::reshape(nullptr, grid.codes, {grid.codes.dim(0) * grid.codes.dim(1), grid.codes.dim(2)});
        double hoyer_sum = 0.0;
        for (std::int64_t r = 0; r < rows.dim(0); ++r) {
            std::vector<double> cell(static_cast<std::size_t>(rows.dim(1)));
            for (std::int64_t k = 0; k < rows.dim(1); ++k) cell[static_cast<std::size_t>(k)] = rows.at(r * rows.dim(1) + k);
            hoyer_sum += hoyer_sparsity(cell);
        }
        os << ds.names[i] << "," << fmt(hoyer_sum / static_cast<double>(rows.dim(0))) << "\n";
    }
    std::cout << os.str();
    write_text(fs::path(out_dir) / "codes.csv", os.str());
}

void cmd_reconstruct(const std::string& ckpt, const std::string& in_dir, const std::string& out_dir,
                     const std::string& csv_path) {
    LoadedModel lm = load_model(ckpt);
    Dataset ds = load_dataset(in_dir, lm.cfg.model.image_size, lm.cfg.model.channels);
    fs::create_directories(out_dir);
    std::vector<EvalRow> rows;
    for (std::size_t i = 0; i < ds.images.size(); ++i) {
        Tensor recon;
        rows.push_back(eval_one(lm.model, ds.names[i], ds.images[i], &recon));
        write_png(fs::path(out_dir) / (stem_of(ds.names[i]) + ".recon.png"), recon);
    }
    const std::string csv = rows_to_csv(rows);
    std::cout << csv;
    write_text(csv_path.empty() ? fs::path(out_dir) / "metrics.csv" : fs::path(csv_path), csv);
}

void cmd_eval(const std::string& ckpt, const std::string& data_dir, const std::string& out_csv) {
    LoadedModel lm = load_model(ckpt);
    Dataset ds = load_dataset(data_dir, lm.cfg.model.image_size, lm.cfg.model.channels);
    std::vector<EvalRow> rows;
    for (std::size_t i = 0; i < ds.images.size(); ++i) rows.push_back(eval_one(lm.model, ds.names[i], ds.images[i], nullptr));
    const std::string csv = rows_to_csv(rows);
    std::cout << csv;
    if (!out_csv.empty()) write_text(out_csv, csv);
}

void cmd_cluster_patches(const std::string& ckpt, const std::string& data_dir, int clusters, std::uint64_t seed,
                         const std::string& out_dir) {
    LoadedModel lm = load_model(ckpt);
    Dataset ds = load_dataset(data_dir, lm.cfg.model.image_size, lm.cfg.model.channels);
    const int h = lm.cfg.model.grid_h(), w = lm.cfg.model.grid_w();
    const std::int64_t K = lm.model.dict.K;
    const std::int64_t per = static_cast<std::int64_t>(h) * w;
    Tensor all({static_cast<std::int64_t>(ds.images.size()) * per, K}, Dtype::F64);
    for (std::size_t i = 0; i < ds.images.size(); ++i) {
        LatentGrid grid = encode(lm.cfg.model, lm.model.weights, ds.images[i].astype(lm.model.dtype));
        grid = sparse_code_grid(grid, lm.model.weights.lista);
        for (std::int64_t cell = 0; cell < per; ++cell) {
            for (std::int64_t k = 0; k < K; ++k) {
                all.set((static_cast<std::int64_t>(i) * per + cell) * K + k, grid.codes.at(cell * K + k));
            }
        }
    }
    KmeansResult km = kmeans(all, clusters, seed, 100);
    fs::create_directories(out_dir);
    std::ostringstream os;
    os << "filename,row,col,cluster\n";
    for (std::size_t i = 0; i < ds.images.size(); ++i) {
        for (int y = 0; y < h; ++y) {
            for (int x = 0; x < w; ++x) {
                os << ds.names[i] << "," << y << "," << x << ","
                   << km.labels[static_cast<std::size_t>(static_cast<std::int64_t>(i) * per + y * w + x)] << "\n";
            }
        }
    }
    write_text(fs::path(out_dir) / "assignments.csv", os.str());
    Checkpoint ck;
    ck.tensors["kmeans.centroids"] = km.centroids;
    ck.set_scalar("kmeans.inertia", km.inertia);
    save_checkpoint(ck, fs::path(out_dir) / "centroids.scvk");
    std::cout << "clustered " << ds.images.size() * static_cast<std::size_t>(per) << " patch codes into " << clusters
              << " groups, inertia " << fmt(km.inertia) << "\n";
}

void cmd_segment(const std::string& ckpt, const std::string& in_dir, const std::string& out_dir,
                 const SegmentOptions& opts) {
    LoadedModel lm = load_model(ckpt);
    Dataset ds = load_dataset(in_dir, lm.cfg.model.image_size, lm.cfg.model.channels);
    fs::create_directories(out_dir);
    std::ostringstream os;
    os << "filename,fg_cells,components_fallback\n";
    for (std::size_t i = 0; i < ds.images.size(); ++i) {
        SegmentationResult seg = segment_image(lm.model, ds.images[i], opts);
        std::vector<std::uint8_t> label_bytes(seg.label_grid.size());
        std::vector<std::uint8_t> fg_idx(seg.label_grid.size());
        int fg_cells = 0;
        for (std::size_t j = 0; j < seg.label_grid.size(); ++j) {
            label_bytes[j] = static_cast<std::uint8_t>(seg.label_grid[j]);
            fg_cells += seg.fg_mask[j];
            fg_idx[j] = seg.fg_mask[j] ? static_cast<std::uint8_t>(1 + seg.label_grid[j] % 15) : 0;
        }
        const std::string stem = stem_of(ds.names[i]);
        write_pgm(fs::path(out_dir) / (stem + ".labels.pgm"), label_bytes, seg.grid_h, seg.grid_w);
        write_png_palette(fs::path(out_dir) / (stem + ".fg.png"), fg_idx, seg.grid_h, seg.grid_w);
        os << ds.names[i] << "," << fg_cells << "," << (seg.spectral_fallback ? 1 : 0) << "\n";
    }
    std::cout << os.str();
    write_text(fs::path(out_dir) / "segments.csv", os.str());
}

std::vector<double> parse_sigmas(const std::string& text) {
    std::vector<double> out;
    std::stringstream ss(text);
    std::string tok;
    while (std::getline(ss, tok, ',')) {
        if (tok.empty()) continue;
        try {
            out.push_back(std::stod(tok));
        } catch (const std::exception&) {
            throw ConfigError("bad sigma value \"" + tok + "\"");
        }
    }
    if (out.empty()) throw ConfigError("empty sigma list");
    return out;
}

void cmd_noise_sweep(const std::string& ckpt, const std::string& data_dir, const std::string& masks_dir,
                     const std::string& sigmas_text, const SegmentOptions& opts, std::uint64_t seed,
                     const std::string& out_csv) {
    LoadedModel lm = load_model(ckpt);
    Dataset ds = load_dataset(data_dir, lm.cfg.model.image_size, lm.cfg.model.channels);
    const fs::path masks = masks_dir.empty() ? fs::path(data_dir).parent_path() / "masks" : fs::path(masks_dir);
    const std::vector<double> sigmas = parse_sigmas(sigmas_text);

    // Resolve ground-truth masks up front; images without one are skipped.
    std::vector<int> usable;
    std::vector<LabelImage> truths;
    for (std::size_t i = 0; i < ds.images.size(); ++i) {
        fs::path mask_path = masks / (stem_of(ds.names[i]) + ".pgm");
        if (!fs::exists(mask_path)) mask_path = masks / (stem_of(ds.names[i]) + ".png");
        if (!fs::exists(mask_path)) {
            std::cerr << "warning: no mask for " << ds.names[i] << ", skipping\n";
            continue;
        }
        usable.push_back(static_cast<int>(i));
        truths.push_back(read_label_image(mask_path));
    }
    if (usable.empty()) throw IoError("no images with ground-truth masks under " + masks.string());

    std::ostringstream os;
    os << "sigma,mean_iou,mean_dice\n";
    for (std::size_t si = 0; si < sigmas.size(); ++si) {
        const double sigma = sigmas[si];
        double sum_iou = 0.0, sum_dice = 0.0;
        for (std::size_t u = 0; u < usable.size(); ++u) {
            const Tensor& clean = ds.images[static_cast<std::size_t>(usable[u])];
            Tensor img = clean.clone();
            if (sigma > 0.0) {
                Rng rng(mix_seed(mix_seed(seed, 0xA0 + si), static_cast<std::uint64_t>(u)));
                for (std::int64_t p = 0; p < img.numel(); ++p) {
                    img.set(p, std::min(1.0, std::max(0.0, img.at(p) + sigma * rng.normal())));
                }
            }
            SegmentationResult seg = segment_image(lm.model, img, opts);
            const LabelImage& truth = truths[u];
            std::vector<int> fg_full =
                resize_labels_nearest(seg.fg_mask, seg.grid_h, seg.grid_w, truth.height, truth.width);
            auto [iou, dice] = iou_dice(fg_full, truth.values);
            sum_iou += iou;
            sum_dice += dice;
        }
        os << fmt(sigma) << "," << fmt(sum_iou / static_cast<double>(usable.size())) << ","
           << fmt(sum_dice / static_cast<double>(usable.size())) << "\n";
    }
    std::cout << os.str();
    if (!out_csv.empty()) write_text(out_csv, os.str());
}

}  // namespace

int run_cli(const std::vector<std::string>& args) {
    CLI::App app{"SC-VAE: sparse-coded autoencoder with an unrolled shrinkage network"};
    app.require_subcommand(1);

    // make-dict
    auto* mk = app.add_subcommand("make-dict", "Build the DCT dictionary and write it as a checkpoint");
    int mk_n = 256, mk_atoms = 512;
    std::string mk_out = "dict.scvk";
    mk->add_option("--n", mk_n, "Latent dimension (perfect square)")->required();
    mk->add_option("--atoms", mk_atoms, "Number of atoms K >= n")->required();
    mk->add_option("--out", mk_out, "Output checkpoint path")->required();
    mk->callback([&]() { cmd_make_dict(mk_n, mk_atoms, mk_out); });

    // train
    auto* tr = app.add_subcommand("train", "Train a model from a config file");
    std::string tr_config, tr_data, tr_out = ".", tr_resume;
    std::int64_t tr_seed = -1;
    tr->add_option("--config", tr_config, "Config file (key = value lines)")->required();
    tr->add_option("--data", tr_data, "Override data_dir from the config");
    tr->add_option("--out", tr_out, "Output directory for best.scvk/last.scvk/losses.csv");
    tr->add_option("--resume", tr_resume, "Resume from a checkpoint");
    tr->add_option("--seed", tr_seed, "Override the config seed");
    tr->callback([&]() { cmd_train(tr_config, tr_data, tr_out, tr_resume, tr_seed); });

    // encode
    auto* en = app.add_subcommand("encode", "Write latent grids and sparse codes for a directory of images");
    std::string en_ckpt, en_in, en_out;
    en->add_option("--ckpt", en_ckpt, "Model checkpoint")->required();
    en->add_option("--in", en_in, "Input image directory")->required();
    en->add_option("--out", en_out, "Output directory")->required();
    en->callback([&]() { cmd_encode(en_ckpt, en_in, en_out); });

    // reconstruct
    auto* rc = app.add_subcommand("reconstruct", "Reconstruct images and report PSNR/SSIM/Hoyer");
    std::string rc_ckpt, rc_in, rc_out, rc_csv;
    rc->add_option("--ckpt", rc_ckpt, "Model checkpoint")->required();
    rc->add_option("--in", rc_in, "Input image directory")->required();
    rc->add_option("--out", rc_out, "Output directory for PNGs and metrics.csv")->required();
    rc->add_option("--csv", rc_csv, "Metrics CSV path (default <out>/metrics.csv)");
    rc->callback([&]() { cmd_reconstruct(rc_ckpt, rc_in, rc_out, rc_csv); });

    // cluster-patches
    auto* cp = app.add_subcommand("cluster-patches", "K-means over all per-cell sparse codes");
    std::string cp_ckpt, cp_data, cp_out;
    int cp_clusters = 16;
    std::uint64_t cp_seed = 0;
    cp->add_option("--ckpt", cp_ckpt, "Model checkpoint")->required();
    cp->add_option("--data", cp_data, "Input image directory")->required();
    cp->add_option("--clusters", cp_clusters, "Number of clusters");
    cp->add_option("--seed", cp_seed, "Clustering seed");
    cp->add_option("--out", cp_out, "Output directory")->required();
    cp->callback([&]() { cmd_cluster_patches(cp_ckpt, cp_data, cp_clusters, cp_seed, cp_out); });

    // segment
    auto* sg = app.add_subcommand("segment", "Unsupervised segmentation from sparse codes");
    std::string sg_ckpt, sg_in, sg_out, sg_method = "spectral";
    SegmentOptions sg_opts;
    sg->add_option("--ckpt", sg_ckpt, "Model checkpoint")->required();
    sg->add_option("--in", sg_in, "Input image directory")->required();
    sg->add_option("--out", sg_out, "Output directory for label/mask files")->required();
    sg->add_option("--classes", sg_opts.classes, "Number of classes (>= 2)");
    sg->add_option("--method", sg_method, "kmeans or spectral")->check(CLI::IsMember({"kmeans", "spectral"}));
    sg->add_option("--knn", sg_opts.knn, "Mutual kNN neighborhood size");
    sg->add_option("--tau", sg_opts.tau, "Boundary-connectivity background threshold");
    sg->add_option("--seed", sg_opts.seed, "Clustering seed");
    sg->add_option("--spatial-weight", sg_opts.spatial_weight, "Optional spatial affinity term (0 = off)");
    sg->callback([&]() {
        sg_opts.method = sg_method == "kmeans" ? SegmentMethod::Kmeans : SegmentMethod::Spectral;
        cmd_segment(sg_ckpt, sg_in, sg_out, sg_opts);
    });

    // eval
    auto* ev = app.add_subcommand("eval", "Print a PSNR/SSIM/Hoyer table for a directory of images");
    std::string ev_ckpt, ev_data, ev_out;
    ev->add_option("--ckpt", ev_ckpt, "Model checkpoint")->required();
    ev->add_option("--data", ev_data, "Input image directory")->required();
    ev->add_option("--out", ev_out, "Also write the table to this CSV file");
    ev->callback([&]() { cmd_eval(ev_ckpt, ev_data, ev_out); });

    // noise-sweep
    auto* ns = app.add_subcommand("noise-sweep", "Segmentation robustness against Gaussian noise");
    std::string ns_ckpt, ns_data, ns_masks, ns_sigmas = "0", ns_out, ns_method = "spectral";
    SegmentOptions ns_opts;
    std::uint64_t ns_seed = 0;
    ns->add_option("--ckpt", ns_ckpt, "Model checkpoint")->required();
    ns->add_option("--data", ns_data, "Image directory (masks in sibling masks/ unless --masks)")->required();
    ns->add_option("--masks", ns_masks, "Ground-truth mask directory");
    ns->add_option("--sigmas", ns_sigmas, "Comma-separated noise levels, e.g. 0,0.05,0.1")->required();
    ns->add_option("--classes", ns_opts.classes, "Number of classes (>= 2)");
    ns->add_option("--knn", ns_opts.knn, "Mutual kNN neighborhood size");
    ns->add_option("--tau", ns_opts.tau, "Boundary-connectivity background threshold");
    ns->add_option("--seed", ns_seed, "Noise and clustering seed");
    ns->add_option("--out", ns_out, "Output CSV path");
    ns->callback([&]() {
        ns_opts.seed = ns_seed;
        cmd_noise_sweep(ns_ckpt, ns_data, ns_masks, ns_sigmas, ns_opts, ns_seed, ns_out);
    });

    std::vector<std::string> reversed(args.rbegin(), args.rend());
    try {
        app.parse(reversed);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}

}  // namespace scvae
