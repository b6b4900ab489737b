#pragma once

#include "fsl/autodiff.hpp"
#include "fsl/baselines.hpp"
#include "fsl/config.hpp"
#include "fsl/dataset.hpp"
#include "fsl/embedding.hpp"
#include "fsl/episodes.hpp"
#include "fsl/optim.hpp"
#include "fsl/params.hpp"
#include "fsl/protonet.hpp"
#include "fsl/refinement.hpp"
#include "fsl/results.hpp"
#include "fsl/rng.hpp"
#include "fsl/tensor.hpp"
#include "fsl/train.hpp"
