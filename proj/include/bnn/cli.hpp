#pragma once

#include <string>

#include "bnn/data.hpp"

namespace bnn::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitError = 1;
inline constexpr int kExitConfig = 2;
inline constexpr int kExitIo = 3;
inline constexpr int kExitVerify = 4;

// Dataset source specifiers:
//   synth:<kind>[,n=..][,ntest=..][,z=..][,shape=CxHxW][,seed=..]
//   fashion:<dir>      (standard uncompressed IDX file names)
//   cifar10:<dir>      (data_batch_*.bin / test_batch.bin)
//   idx:<images>:<labels>
// `role` selects the train or test split where the source has both.
Dataset load_data_spec(const std::string& spec, const std::string& role);

int run(int argc, const char* const* argv);

}  // namespace bnn::cli
