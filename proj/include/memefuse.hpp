#pragma once

#include "memefuse/embedding_store.hpp"
#include "memefuse/experiments.hpp"
#include "memefuse/hard_mining.hpp"
#include "memefuse/mlp_head.hpp"
#include "memefuse/objective.hpp"
#include "memefuse/optimizer.hpp"
#include "memefuse/report.hpp"
#include "memefuse/representation.hpp"
#include "memefuse/rng.hpp"
#include "memefuse/synthetic.hpp"
#include "memefuse/trainer.hpp"
