#include "rankssm/bench.hpp"

#include <algorithm>
#include <array>
#include <chrono>
#include <cmath>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <new>
#include <sstream>

#include "rankssm/memtrack.hpp"
#include "rankssm/ops.hpp"
#include "rankssm/ssm.hpp"

namespace rankssm {

namespace {

Tensor rand_tensor(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
    Tensor t = Tensor::zeros(shape);
    for (double& x : t.mutable_data()) x = rng.uniform(lo, hi);
    return t;
}

struct Kernel {
    std::function<double()> run;  // one timed repetition, returns a checksum
};

Kernel make_scan_kernel(int L, const BenchConfig& cfg, ScanKind kind, BackwardMemory memory) {
    Rng rng(cfg.seed ^ static_cast<std::uint64_t>(L));
    auto params = std::make_shared<SsmParams>(
        make_selective_params(cfg.n_state, cfg.d_model, rng));
    auto xs = std::make_shared<std::vector<Tensor>>();
    for (int b = 0; b < cfg.batch; ++b) {
        xs->push_back(rand_tensor({L, cfg.d_model}, rng).set_requires_grad(true));
    }
    std::vector<Tensor> grads = {params->a_log,      params->delta_proj.w, params->delta_proj.b,
                                 params->b_proj.w,   params->c_proj.w,     params->skip_d};
    Kernel k;
    k.run = [params, xs, grads, kind, memory]() {
        double checksum = 0.0;
        for (Tensor& x : *xs) {
            tape().clear();
            x.zero_grad();
            for (const Tensor& g : grads) g.zero_grad();
            Tensor loss = sum(selective_scan(x, *params, kind, memory));
            backward(loss);
            checksum += loss.item() + x.grad()[0];
            tape().clear();
        }
        return checksum;
    };
    return k;
}

Kernel make_conv_build_kernel(int L, const BenchConfig& cfg) {
    Rng rng(cfg.seed ^ static_cast<std::uint64_t>(L));
    auto params = std::make_shared<SsmParams>(make_lti_params(cfg.n_state, cfg.d_model, rng));
    Kernel k;
    k.run = [params, L]() {
        ConvKernel ck = build_conv_kernel(*params, L);
        return ck.taps.at(0, L - 1) + ck.taps.at(0, 0);
    };
    return k;
}

Kernel make_attention_kernel(int L, const BenchConfig& cfg) {
    Rng rng(cfg.seed ^ static_cast<std::uint64_t>(L));
    const int d = cfg.d_model;
    auto qkv = std::make_shared<std::vector<std::array<Tensor, 3>>>();
    for (int b = 0; b < cfg.batch; ++b) {
        qkv->push_back({rand_tensor({L, d}, rng).set_requires_grad(true),
                        rand_tensor({L, d}, rng).set_requires_grad(true),
                        rand_tensor({L, d}, rng).set_requires_grad(true)});
    }
    const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(d));
    Kernel k;
    k.run = [qkv, inv_sqrt_d]() {
        double checksum = 0.0;
        for (auto& [q, kk, v] : *qkv) {
            tape().clear();
            q.zero_grad();
            kk.zero_grad();
            v.zero_grad();
            Tensor attn = softmax_lastdim(scale(matmul(q, transpose(kk)), inv_sqrt_d));
            Tensor loss = sum(matmul(attn, v));
            backward(loss);
            checksum += loss.item() + q.grad()[0];
            tape().clear();
        }
        return checksum;
    };
    return k;
}

Kernel make_kernel(const std::string& name, int L, const BenchConfig& cfg) {
    if (name == "selective_scan_seq") {
        return make_scan_kernel(L, cfg, ScanKind::sequential, BackwardMemory::store_all);
    }
    if (name == "selective_scan_par") {
        return make_scan_kernel(L, cfg, ScanKind::parallel, BackwardMemory::store_all);
    }
    if (name == "selective_scan_recompute") {
        return make_scan_kernel(L, cfg, ScanKind::sequential, BackwardMemory::recompute);
    }
    if (name == "conv_build") return make_conv_build_kernel(L, cfg);
    if (name == "attention") return make_attention_kernel(L, cfg);
    throw ConfigError("bench: unknown kernel '" + name + "'");
}

}  // namespace

std::vector<std::string> available_kernels() {
    return {"selective_scan_seq", "selective_scan_par", "selective_scan_recompute", "conv_build",
            "attention"};
}

std::vector<BenchRecord> run_benchmark(const std::vector<std::string>& kernels,
                                       const std::vector<int>& lengths, const BenchConfig& cfg) {
    if (cfg.repeats < 5) throw ConfigError("bench: repeats must be >= 5");
    if (cfg.warmup < 1) throw ConfigError("bench: warmup must be >= 1");
    for (std::size_t i = 1; i < lengths.size(); ++i) {
        if (lengths[i] <= lengths[i - 1]) {
            throw ConfigError("bench: lengths must be strictly ascending");
        }
    }

    std::vector<BenchRecord> records;
    for (const std::string& name : kernels) {
        for (int L : lengths) {
            BenchRecord rec;
            rec.kernel = name;
            rec.seq_len = L;
            rec.d_model = cfg.d_model;
            rec.n_state = cfg.n_state;
            rec.batch = cfg.batch;
            rec.threads = cfg.threads;
            try {
                Kernel k = make_kernel(name, L, cfg);
                for (int w = 0; w < cfg.warmup; ++w) k.run();

                std::vector<long long> times;
                double checksum = 0.0;
                std::size_t peak = 0;
                for (int r = 0; r < cfg.repeats; ++r) {
                    memtrack::reset_peak();
                    const std::size_t base = memtrack::current();
                    const auto t0 = std::chrono::steady_clock::now();
                    const double c = k.run();
                    const auto t1 = std::chrono::steady_clock::now();
                    peak = std::max(peak, memtrack::peak() - base);
                    times.push_back(
                        std::chrono::duration_cast<std::chrono::nanoseconds>(t1 - t0).count());
                    if (r == 0) {
                        checksum = c;
                    } else if (c != checksum) {
                        // timing must not perturb the computation itself
                        throw NumericError("bench: kernel '" + name +
                                           "' produced differing outputs across repeats");
                    }
                }
                std::sort(times.begin(), times.end());
                rec.median_ns = times[static_cast<std::size_t>((cfg.repeats - 1) / 2)];
                rec.min_ns = times.front();
                rec.max_ns = times.back();
                rec.tokens_per_sec = static_cast<double>(L) * cfg.batch /
                                     (static_cast<double>(rec.median_ns) * 1e-9);
                rec.peak_bytes = peak;
                rec.checksum = checksum;
            } catch (const std::bad_alloc&) {
                rec.failed = true;
                std::cerr << "warning: bench: kernel '" << name << "' at L=" << L
                          << " ran out of memory; marked failed\n";
            }
            records.push_back(std::move(rec));
        }
    }
    return records;
}

std::vector<SlopeRow> scaling_report(const std::vector<BenchRecord>& records) {
    std::map<std::string, std::vector<std::pair<double, double>>> points;
    for (const BenchRecord& r : records) {
        if (r.failed || r.median_ns <= 0) continue;
        points[r.kernel].emplace_back(std::log(static_cast<double>(r.seq_len)),
                                      std::log(static_cast<double>(r.median_ns)));
    }
    std::vector<SlopeRow> rows;
    for (const auto& [kernel, pts] : points) {
        if (pts.size() < 3) {
            std::cerr << "warning: scaling_report: kernel '" << kernel << "' has only "
                      << pts.size() << " points, omitted from fit\n";
            continue;
        }
        double sx = 0, sy = 0, sxx = 0, sxy = 0;
        for (const auto& [x, y] : pts) {
            sx += x;
            sy += y;
            sxx += x * x;
            sxy += x * y;
        }
        const double n = static_cast<double>(pts.size());
        SlopeRow row;
        row.kernel = kernel;
        row.slope = (n * sxy - sx * sy) / (n * sxx - sx * sx);
        row.points = static_cast<int>(pts.size());
        rows.push_back(std::move(row));
    }
    return rows;
}

void write_bench_csv(const std::string& path, const std::vector<BenchRecord>& records) {
    std::ofstream os(path);
    if (!os) throw DataError("bench: cannot open " + path + " for writing");
    os << "kernel,L,d_model,n_state,batch,median_ns,tokens_per_sec,peak_bytes,threads\n";
    char buf[64];
    for (const BenchRecord& r : records) {
        if (r.failed) continue;  // failed rows only appear in the .dat comments
        std::snprintf(buf, sizeof(buf), "%.17g", r.tokens_per_sec);
        os << r.kernel << "," << r.seq_len << "," << r.d_model << "," << r.n_state << ","
           << r.batch << "," << r.median_ns << "," << buf << "," << r.peak_bytes << ","
           << r.threads << "\n";
    }
}

std::vector<BenchRecord> read_bench_csv(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw DataError("bench: cannot open " + path);
    std::vector<BenchRecord> records;
    std::string line;
    if (!std::getline(is, line)) return records;  // header
    int lineno = 1;
    while (std::getline(is, line)) {
        ++lineno;
        if (line.empty()) continue;
        std::vector<std::string> f;
        std::istringstream ls(line);
        std::string tok;
        while (std::getline(ls, tok, ',')) f.push_back(tok);
        if (f.size() != 9) {
            throw DataError("bench: line " + std::to_string(lineno) + ": expected 9 fields");
        }
        BenchRecord r;
        try {
            r.kernel = f[0];
            r.seq_len = std::stoi(f[1]);
            r.d_model = std::stoi(f[2]);
            r.n_state = std::stoi(f[3]);
            r.batch = std::stoi(f[4]);
            r.median_ns = std::stoll(f[5]);
            r.tokens_per_sec = std::stod(f[6]);
            r.peak_bytes = static_cast<std::size_t>(std::stoull(f[7]));
            r.threads = std::stoi(f[8]);
        } catch (const std::exception&) {
            throw DataError("bench: line " + std::to_string(lineno) + ": parse error");
        }
        records.push_back(std::move(r));
    }
    return records;
}

void write_bench_dat(const std::string& path, const std::vector<BenchRecord>& records) {
    std::ofstream os(path);
    if (!os) throw DataError("bench: cannot open " + path + " for writing");
    os << "# L median_ns tokens_per_sec peak_bytes  (one block per kernel)\n";
    std::string current;
    bool first = true;
    for (const BenchRecord& r : records) {
        if (r.kernel != current) {
            if (!first) os << "\n\n";
            os << "# kernel: " << r.kernel << "\n";
            current = r.kernel;
            first = false;
        }
        if (r.failed) {
            os << "# L=" << r.seq_len << " failed (out of memory)\n";
            continue;
        }
        os << r.seq_len << " " << r.median_ns << " " << r.tokens_per_sec << " " << r.peak_bytes
           << "\n";
    }
}

}  // namespace rankssm
