#pragma once

#include "psnet/checkpoint.hpp"
#include "psnet/config.hpp"
#include "psnet/crc.hpp"
#include "psnet/data.hpp"
#include "psnet/encoder.hpp"
#include "psnet/errors.hpp"
#include "psnet/evaluate.hpp"
#include "psnet/flow.hpp"
#include "psnet/gdr.hpp"
#include "psnet/infer.hpp"
#include "psnet/ipf.hpp"
#include "psnet/log.hpp"
#include "psnet/losses.hpp"
#include "psnet/metrics.hpp"
#include "psnet/model.hpp"
#include "psnet/ops.hpp"
#include "psnet/synthetic.hpp"
#include "psnet/train.hpp"
