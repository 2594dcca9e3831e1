#pragma once

// Umbrella header: the whole library in dependency order.

#include "latentstat/random.hpp"
#include "latentstat/series.hpp"
#include "latentstat/decompose.hpp"
#include "latentstat/unitroot.hpp"
#include "latentstat/tensor.hpp"
#include "latentstat/layers.hpp"
#include "latentstat/recurrent.hpp"
#include "latentstat/optimizer.hpp"
#include "latentstat/gradcheck.hpp"
#include "latentstat/network.hpp"
#include "latentstat/stationarizer.hpp"
#include "latentstat/vae.hpp"
#include "latentstat/predictors.hpp"
#include "latentstat/ingest.hpp"
#include "latentstat/pipeline.hpp"
