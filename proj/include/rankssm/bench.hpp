#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "rankssm/tensor.hpp"

namespace rankssm {

struct BenchConfig {
    int d_model = 32;   // channel width for scan kernels, model width for attention
    int n_state = 16;
    int batch = 4;
    int repeats = 5;    // timed runs; median reported, min/max retained
    int warmup = 1;
    std::uint64_t seed = 0;
    int threads = 1;
};

struct BenchRecord {
    std::string kernel;
    int seq_len = 0;
    int d_model = 0;
    int n_state = 0;
    int batch = 0;
    long long median_ns = 0;
    long long min_ns = 0;
    long long max_ns = 0;
    double tokens_per_sec = 0.0;
    std::size_t peak_bytes = 0;
    int threads = 1;
    bool failed = false;      // out-of-memory at this length
    double checksum = 0.0;    // output digest; equal across repeats
};

// Kernel names: selective_scan_seq, selective_scan_par,
// selective_scan_recompute, conv_build, attention. Each timed run is one
// forward+backward pass (conv_build: kernel construction only) over batch
// sequences of random data.
std::vector<std::string> available_kernels();

std::vector<BenchRecord> run_benchmark(const std::vector<std::string>& kernels,
                                       const std::vector<int>& lengths, const BenchConfig& cfg);

struct SlopeRow {
    std::string kernel;
    double slope = 0.0;  // least-squares slope of log(time) vs log(L)
    int points = 0;
};

// Kernels with fewer than 3 successful lengths are omitted with a warning.
std::vector<SlopeRow> scaling_report(const std::vector<BenchRecord>& records);

// CSV: kernel,L,d_model,n_state,batch,median_ns,tokens_per_sec,peak_bytes,threads
void write_bench_csv(const std::string& path, const std::vector<BenchRecord>& records);
std::vector<BenchRecord> read_bench_csv(const std::string& path);

// gnuplot-friendly companion: one block per kernel, blank-line separated.
void write_bench_dat(const std::string& path, const std::vector<BenchRecord>& records);

}  // namespace rankssm
