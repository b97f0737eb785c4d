"""MCP tool definitions for training, evaluation and data preparation."""

import asyncio
import logging
from pathlib import Path
from typing import Any, Dict

from mcp.types import TextContent, Tool

from .config import DEFAULT_FRAME_ALPHA, SWEEP_AXES
from .runner import evaluate, generate_data, make_frame, run_sweep, train_run
from .types import DataSpec, FrameSearchConfig, PrototypeTaskConfig, RunConfig, SequenceTaskConfig


logger = logging.getLogger(__name__)


def _absolute_dir(value, name: str = "output_dir") -> Path:
    if not value:
        raise ValueError(f"{name} is required")
    path = Path(value)
    if not path.is_absolute():
        raise ValueError(f"{name} must be an absolute path, got: {value}")
    return path


def _run_config(arguments: Dict[str, Any]) -> RunConfig:
    output_dir = _absolute_dir(arguments.get("output_dir"))
    mapping = dict(arguments.get("config") or {})
    mapping["output_dir"] = str(output_dir)
    return RunConfig.from_mapping(mapping)


def _text(text: str) -> list[TextContent]:
    return [TextContent(type="text", text=text)]


_RUN_CONFIG_SCHEMA = {
    "type": "object",
    "description": "Run settings with the same nested layout as the TOML config file: "
                   "model, layers, seed, and sections hyper, encoder, data, frame.",
    "default": {},
}


TRAIN_MODEL_TOOL = Tool(
    name="train_model",
    description="Train a binary network with binary error propagation. Writes metrics.jsonl "
                "(one record per epoch) and the best checkpoint best.bepc to output_dir.",
    inputSchema={
        "type": "object",
        "properties": {
            "config": _RUN_CONFIG_SCHEMA,
            "output_dir": {
                "type": "string",
                "description": "Absolute path of the run directory",
            },
        },
        "required": ["output_dir"],
    },
)


EVALUATE_CHECKPOINT_TOOL = Tool(
    name="evaluate_checkpoint",
    description="Report accuracy, confusion counts and mean margin of a stored checkpoint",
    inputSchema={
        "type": "object",
        "properties": {
            "checkpoint": {
                "type": "string",
                "description": "Path to a .bepc checkpoint",
            },
            "split": {
                "type": "string",
                "enum": ["train", "validation", "test"],
                "default": "test",
            },
            "data": {
                "type": "object",
                "description": "Data source to score instead of the checkpoint's own, in the layout of the "
                               "config's data section (kind, train_path, test_path, ...). The whole training "
                               "file stays in the train split unless validation_fraction is given.",
            },
        },
        "required": ["checkpoint"],
    },
)


SWEEP_TOOL = Tool(
    name="sweep",
    description="Train over the cross product of one or two hyperparameter axes and "
                "report seed-averaged accuracy per point",
    inputSchema={
        "type": "object",
        "properties": {
            "config": _RUN_CONFIG_SCHEMA,
            "output_dir": {
                "type": "string",
                "description": "Absolute path for sweep.tsv, plot data and per-run folders",
            },
            "axes": {
                "type": "object",
                "description": f"Axis name to list of values; names from {SWEEP_AXES}",
                "additionalProperties": {"type": "array"},
            },
            "seeds": {
                "type": "integer",
                "description": "Replicates per point, using consecutive seeds",
                "minimum": 1,
                "default": 1,
            },
        },
        "required": ["output_dir", "axes"],
    },
)


MAKE_FRAME_TOOL = Tool(
    name="make_frame",
    description="Search a near-equiangular frame of class prototypes and store it",
    inputSchema={
        "type": "object",
        "properties": {
            "classes": {"type": "integer", "minimum": 2},
            "dim": {"type": "integer", "minimum": 1},
            "alpha": {"type": "number", "minimum": 0, "default": DEFAULT_FRAME_ALPHA},
            "iterations": {"type": "integer", "minimum": 0},
            "seed": {"type": "integer", "minimum": 0, "default": 0},
            "out": {
                "type": "string",
                "description": "Absolute path of the frame file to write",
            },
        },
        "required": ["classes", "dim", "out"],
    },
)


GENERATE_DATASET_TOOL = Tool(
    name="generate_dataset",
    description="Write a synthetic prototype or sequence task to disk",
    inputSchema={
        "type": "object",
        "properties": {
            "kind": {"type": "string", "enum": ["prototypes", "sequences"]},
            "output_dir": {
                "type": "string",
                "description": "Absolute path of the directory to write into",
            },
            "task": {
                "type": "object",
                "description": "Task settings (n_train, n_test, classes, flip_p, seed, and dim "
                               "for prototypes or steps / width for sequences)",
                "default": {},
            },
        },
        "required": ["kind", "output_dir"],
    },
)


async def handle_train_model(arguments: Dict[str, Any]) -> list[TextContent]:
    """
    Handle the train_model tool call.

    Args:
        arguments: Tool call arguments from MCP client

    Returns:
        List of TextContent with the run summary
    """
    try:
        config = _run_config(arguments)
        logger.info(f"Received train_model request: model={config.model}, layers={list(config.layers)}, "
                    f"epochs={config.hyper.epochs}, output_dir='{config.output_dir}'")

        result = await asyncio.to_thread(train_run, config)

        lines = [
            f"Training finished after {len(result.metrics) - 1} epochs",
            f"Best selection accuracy: {result.best_accuracy:.4f} (epoch {result.best_epoch})",
        ]
        if result.test_accuracy is not None:
            lines.append(f"Test accuracy at best epoch: {result.test_accuracy:.4f}")
        lines.append(f"Checkpoint: {result.checkpoint}")
        return _text("\n".join(lines))

    except ValueError as e:
        logger.error(f"Validation error: {str(e)}")
        return _text(f"Error: Invalid parameters - {str(e)}")

    except Exception as e:
        logger.error(f"Training error: {str(e)}")
        return _text(f"Error: Failed to train model - {str(e)}")


async def handle_evaluate_checkpoint(arguments: Dict[str, Any]) -> list[TextContent]:
    try:
        checkpoint = arguments.get("checkpoint")
        if not checkpoint:
            raise ValueError("checkpoint is required")
        split = arguments.get("split", "test")
        data = None
        if arguments.get("data"):
            data = DataSpec.from_mapping({"validation_fraction": 0.0, **arguments["data"]})

        result = await asyncio.to_thread(evaluate, checkpoint, split, data)

        lines = [
            f"Evaluated {result.count} samples ({split})",
            f"Accuracy: {result.accuracy:.4f}",
            f"Mean margin: {result.mean_margin:.4f}",
            "Confusion (rows = true class):",
        ]
        lines.extend("  " + " ".join(str(v) for v in row) for row in result.confusion)
        return _text("\n".join(lines))

    except ValueError as e:
        logger.error(f"Evaluation validation error: {str(e)}")
        return _text(f"Error: Invalid parameters - {str(e)}")

    except Exception as e:
        logger.error(f"Evaluation error: {str(e)}")
        return _text(f"Error: Failed to evaluate checkpoint - {str(e)}")


async def handle_sweep(arguments: Dict[str, Any]) -> list[TextContent]:
    try:
        template = _run_config(arguments)
        axes = arguments.get("axes") or {}
        seeds = arguments.get("seeds", 1)
        if not isinstance(seeds, int) or seeds < 1:
            raise ValueError(f"seeds must be a positive integer, got {seeds!r}")

        logger.info(f"Received sweep request: axes={axes}, seeds={seeds}")
        rows = await asyncio.to_thread(
            run_sweep, template, axes, [template.seed + i for i in range(seeds)]
        )

        lines = [f"Sweep completed: {len(rows)} points"]
        for row in rows:
            setting = ", ".join(f"{k}={v}" for k, v in row.axes.items())
            lines.append(f"{setting}: {row.mean:.4f} +/- {row.std:.4f}")
        lines.append(f"Table: {Path(template.output_dir) / 'sweep.tsv'}")
        return _text("\n".join(lines))

    except ValueError as e:
        logger.error(f"Sweep validation error: {str(e)}")
        return _text(f"Error: Invalid parameters - {str(e)}")

    except Exception as e:
        logger.error(f"Sweep error: {str(e)}")
        return _text(f"Error: Failed to run sweep - {str(e)}")


async def handle_make_frame(arguments: Dict[str, Any]) -> list[TextContent]:
    try:
        out = _absolute_dir(arguments.get("out"), "out")
        config = FrameSearchConfig(
            classes=arguments.get("classes"),
            dim=arguments.get("dim"),
            alpha=arguments.get("alpha", DEFAULT_FRAME_ALPHA),
            iterations=arguments.get("iterations"),
            seed=arguments.get("seed", 0),
        )

        frame, path = await asyncio.to_thread(make_frame, config, out)

        off_diagonal = [int(frame.gram[i, j]) for i in range(frame.classes) for j in range(i + 1, frame.classes)]
        return _text(
            f"Frame {frame.classes}x{frame.dim} written to: {path}\n"
            f"Off-diagonal inner products: min {min(off_diagonal)}, max {max(off_diagonal)}"
        )

    except ValueError as e:
        logger.error(f"Frame validation error: {str(e)}")
        return _text(f"Error: Invalid parameters - {str(e)}")

    except Exception as e:
        logger.error(f"Frame search error: {str(e)}")
        return _text(f"Error: Failed to make frame - {str(e)}")


async def handle_generate_dataset(arguments: Dict[str, Any]) -> list[TextContent]:
    try:
        kind = arguments.get("kind")
        out = _absolute_dir(arguments.get("output_dir"))
        task = dict(arguments.get("task") or {})
        task.setdefault("seed", 0)
        try:
            if kind == "sequences":
                config = SequenceTaskConfig(**task)
            elif kind == "prototypes":
                config = PrototypeTaskConfig(**task)
            else:
                raise ValueError(f"kind must be prototypes or sequences, got {kind!r}")
        except TypeError as e:
            raise ValueError(str(e)) from e

        paths = await asyncio.to_thread(generate_data, kind, out, config)
        return _text(f"Generated {kind} task:\n" + "\n".join(f"  {p}" for p in paths))

    except ValueError as e:
        logger.error(f"Dataset validation error: {str(e)}")
        return _text(f"Error: Invalid parameters - {str(e)}")

    except Exception as e:
        logger.error(f"Dataset generation error: {str(e)}")
        return _text(f"Error: Failed to generate dataset - {str(e)}")
