#pragma once

#include "ctp/error.hpp"
#include "ctp/matrix.hpp"
#include "ctp/parallel.hpp"
#include "ctp/similarity.hpp"
#include "ctp/loss.hpp"
#include "ctp/diff.hpp"
#include "ctp/point_cloud.hpp"
#include "ctp/encoders.hpp"
#include "ctp/dataset.hpp"
#include "ctp/model.hpp"
#include "ctp/training.hpp"
#include "ctp/eval.hpp"
#include "ctp/checks.hpp"
#include "ctp/experiments.hpp"
