"""
nsmpc 命令行入口，使用 Typer 实现

退出码：0 成功，1 用法或输入错误，2 求解失败。
"""
import json
import sys
from dataclasses import asdict
from pathlib import Path
from typing import List, Optional

import click
import numpy as np
import typer
from loguru import logger
from rich.console import Console
from rich.progress import BarColumn, Progress, SpinnerColumn, TextColumn, TimeElapsedColumn
from rich.table import Table

from .bench.closed_loop import closed_loop
from .bench.generators import gen_mass_spring, gen_random_system
from .bench.profile import load_reports, perf_profile
from .bench.sweep import timing_sweep, write_report
from .config import SOLVERS, BenchConfig, SolverOptions
from .core.errors import NsmpcError, ProblemValidationError
from .core.models import SolveResult
from .core.problem import MpcProblem, load_problem, save_problem
from .core.solvers import make_solver
from .utils.logger_config import setup_logger

app = typer.Typer(help="零空间内点法 MPC 求解器与基准测试工具")
console = Console()

EXIT_USAGE = 1
EXIT_SOLVER_FAILURE = 2


@app.callback()
def configure(
    quiet: bool = typer.Option(False, "--quiet", "-q", help="不在控制台输出日志"),
    verbose: bool = typer.Option(False, "--verbose", "-v", help="控制台输出 DEBUG 日志"),
    no_log_file: bool = typer.Option(False, "--no-log-file", help="不写日志文件"),
):
    setup_logger("nsmpc", console_output=not quiet, file_output=not no_log_file,
                 level="DEBUG" if verbose else "INFO")


def _bench_config(config_path: Optional[Path], **overrides) -> BenchConfig:
    return BenchConfig.from_config(config_path, **overrides)


def _solver_options(config_path: Optional[Path], opts: Optional[str]) -> SolverOptions:
    return SolverOptions.from_config(config_path).with_overrides(opts)


def _build_problem(cfg: BenchConfig, problem_file: Optional[Path], dense_cost: bool = False) -> MpcProblem:
    if problem_file is not None or cfg.family == "file":
        if problem_file is None:
            raise ProblemValidationError("problem", "family=file 时必须提供 --problem")
        return load_problem(problem_file)
    if cfg.family == "mass-spring":
        if cfg.n_x % 2:
            raise ProblemValidationError("n_x", f"质量弹簧链的 n_x 必须为偶数，实际为 {cfg.n_x}")
        return gen_mass_spring(cfg.n_x // 2, cfg.n_u, cfg.seed, T=cfg.T, dt=cfg.dt,
                               x0_value=cfg.mass_spring_x0, state_bound=cfg.state_bound,
                               input_bound=cfg.input_bound)
    return gen_random_system(cfg.n_x, cfg.n_u, cfg.seed, T=cfg.T, dense_cost=dense_cost,
                             x0_value=cfg.random_x0, state_bound=cfg.state_bound,
                             input_bound=cfg.input_bound)


def _result_dict(result: SolveResult) -> dict:
    return {
        "status": result.status.value,
        "iterations": result.iterations,
        "factorizations": result.factorizations,
        "objective": result.objective,
        "residual": result.residual,
        "mu": result.mu,
        "max_virtual": result.max_virtual,
        "solve_us": result.solve_time * 1e6,
        "time_per_iter_us": result.time_per_iteration * 1e6,
        "u_trajectory": result.u_trajectory.tolist(),
        "x_trajectory": result.x_trajectory.tolist(),
        "message": result.message,
    }


def _print_result(result: SolveResult, solver_name: str) -> None:
    table = Table(title=f"求解结果 ({solver_name})")
    table.add_column("项目", style="cyan", no_wrap=True)
    table.add_column("值", style="magenta")
    color = "green" if result.converged else "red"
    table.add_row("状态", f"[{color}]{result.status.value}[/{color}]")
    table.add_row("牛顿迭代", str(result.iterations))
    table.add_row("分解次数", str(result.factorizations))
    table.add_row("目标值", f"{result.objective:.9g}")
    table.add_row("残差", f"{result.residual:.3e}")
    table.add_row("μ", f"{result.mu:.3e}")
    table.add_row("max|u*|", f"{result.max_virtual:.3e}")
    table.add_row("每次迭代耗时", f"{result.time_per_iteration * 1e6:.1f} us")
    table.add_row("u(0)", np.array2string(result.first_control, precision=6))
    console.print(table)


@app.command()
def gen(
    family: Optional[str] = typer.Option(None, "--family", help="random 或 mass-spring"),
    nx: Optional[int] = typer.Option(None, "--nx", help="状态维数"),
    nu: Optional[int] = typer.Option(None, "--nu", help="控制维数"),
    T: Optional[int] = typer.Option(None, "--T", help="时域长度"),
    seed: Optional[int] = typer.Option(None, "--seed", help="随机种子"),
    dense_cost: bool = typer.Option(False, "--dense-cost", help="随机系统使用稠密正定代价矩阵"),
    out: Optional[Path] = typer.Option(None, "--out", help="输出 JSON 文件，缺省打印到标准输出"),
    config: Optional[Path] = typer.Option(None, "--config", help="config.toml 路径"),
):
    """生成问题并写成问题 JSON"""
    cfg = _bench_config(config, family=family, n_x=nx, n_u=nu, T=T, seed=seed)
    if cfg.family == "file":
        raise ProblemValidationError("family", "gen 只支持 random 与 mass-spring")
    prob = _build_problem(cfg, None, dense_cost)
    if out is None:
        typer.echo(json.dumps(prob.to_dict()))
        return
    save_problem(prob, out)
    console.print(f"[green]已写入问题: {out} (n_x={prob.n_x}, n_u={prob.n_u}, T={prob.T})[/green]")


@app.command()
def solve(
    problem: Optional[Path] = typer.Option(None, "--problem", help="问题 JSON 文件"),
    family: Optional[str] = typer.Option(None, "--family", help="random | mass-spring | file"),
    nx: Optional[int] = typer.Option(None, "--nx"),
    nu: Optional[int] = typer.Option(None, "--nu"),
    T: Optional[int] = typer.Option(None, "--T"),
    seed: Optional[int] = typer.Option(None, "--seed"),
    solver: Optional[str] = typer.Option(None, "--solver", help="nullspace 或 classical"),
    opts: Optional[str] = typer.Option(None, "--opts", help="覆盖求解器参数的 JSON"),
    out: Optional[Path] = typer.Option(None, "--out", help="结果文件"),
    fmt: Optional[str] = typer.Option(None, "--format", help="csv 或 json"),
    config: Optional[Path] = typer.Option(None, "--config", help="config.toml 路径"),
):
    """求解单个 QP"""
    cfg = _bench_config(config, family=family, n_x=nx, n_u=nu, T=T, seed=seed, solver=solver, format=fmt)
    options = _solver_options(config, opts)
    prob = _build_problem(cfg, problem)
    result = make_solver(cfg.solver, prob, options).solve()
    _print_result(result, cfg.solver)

    if out is not None:
        if cfg.format == "json":
            out.parent.mkdir(parents=True, exist_ok=True)
            out.write_text(json.dumps(_result_dict(result), indent=2), encoding="utf-8")
        else:
            write_report([asdict(r) for r in result.records], out, "csv")
    if not result.converged:
        raise typer.Exit(EXIT_SOLVER_FAILURE)


@app.command()
def simulate(
    problem: Optional[Path] = typer.Option(None, "--problem", help="问题 JSON 文件"),
    family: Optional[str] = typer.Option(None, "--family"),
    nx: Optional[int] = typer.Option(None, "--nx"),
    nu: Optional[int] = typer.Option(None, "--nu"),
    T: Optional[int] = typer.Option(None, "--T"),
    steps: Optional[int] = typer.Option(None, "--steps", help="闭环步数"),
    seed: Optional[int] = typer.Option(None, "--seed"),
    solver: Optional[str] = typer.Option(None, "--solver"),
    opts: Optional[str] = typer.Option(None, "--opts"),
    out: Optional[Path] = typer.Option(None, "--out"),
    fmt: Optional[str] = typer.Option(None, "--format"),
    config: Optional[Path] = typer.Option(None, "--config"),
):
    """闭环仿真，每步施加第一阶段控制"""
    cfg = _bench_config(config, family=family, n_x=nx, n_u=nu, T=T, n_steps=steps, seed=seed,
                        solver=solver, format=fmt)
    options = _solver_options(config, opts)
    prob = _build_problem(cfg, problem)
    mpc = make_solver(cfg.solver, prob, options)

    with Progress(
        SpinnerColumn(),
        TextColumn("[progress.description]{task.description}"),
        BarColumn(),
        TextColumn("{task.completed}/{task.total}"),
        TimeElapsedColumn(),
        console=console,
    ) as progress:
        task = progress.add_task(f"闭环仿真 ({cfg.solver})", total=cfg.n_steps)
        log = closed_loop(prob, mpc, cfg.n_steps, on_step=lambda _: progress.advance(task))

    table = Table(title="闭环统计")
    table.add_column("步数", style="cyan")
    table.add_column("平均迭代", style="magenta")
    table.add_column("最大迭代", style="magenta")
    table.add_column("累计阶段代价", style="magenta")
    iters = log.iterations
    table.add_row(
        str(len(log.records)),
        f"{np.mean(iters):.2f}" if iters else "-",
        str(max(iters)) if iters else "-",
        f"{sum(r.stage_cost for r in log.records):.6g}",
    )
    console.print(table)

    if out is not None:
        write_report(log.to_rows(), out, cfg.format)
    if log.aborted:
        console.print(f"[red]{log.message}[/red]")
        raise typer.Exit(EXIT_SOLVER_FAILURE)


def _parse_grid(grid: str) -> List[int]:
    try:
        values = [int(v) for v in grid.replace(" ", "").split(",") if v]
    except ValueError:
        raise ProblemValidationError("grid", f"无法解析网格: {grid}")
    if not values:
        raise ProblemValidationError("grid", "网格不能为空")
    return values


@app.command()
def sweep(
    axis: str = typer.Option("n_u", "--axis", help="n_u | T | n_x"),
    grid: str = typer.Option(..., "--grid", help="逗号分隔的网格，例如 1,10,20,29"),
    family: Optional[str] = typer.Option(None, "--family"),
    nx: Optional[int] = typer.Option(None, "--nx"),
    nu: Optional[int] = typer.Option(None, "--nu"),
    T: Optional[int] = typer.Option(None, "--T"),
    seed: Optional[int] = typer.Option(None, "--seed"),
    solver: Optional[List[str]] = typer.Option(None, "--solver", help="可重复；缺省两种求解器都测"),
    ratio: Optional[int] = typer.Option(None, "--ratio", help="axis=n_x 时按 n_x:n_u 固定比例"),
    repeats: Optional[int] = typer.Option(None, "--repeats", help="每点重复次数，取中位数"),
    workers: Optional[int] = typer.Option(None, "--workers", help="并行线程数"),
    opts: Optional[str] = typer.Option(None, "--opts"),
    out: Optional[Path] = typer.Option(None, "--out"),
    fmt: Optional[str] = typer.Option(None, "--format"),
    config: Optional[Path] = typer.Option(None, "--config"),
):
    """计时扫描，输出每次牛顿迭代的耗时"""
    cfg = _bench_config(config, family=family, n_x=nx, n_u=nu, T=T, seed=seed, repeats=repeats,
                        workers=workers, format=fmt)
    if cfg.family == "file":
        raise ProblemValidationError("family", "sweep 只支持 random 与 mass-spring")
    solvers = solver or ["nullspace", "classical"]
    for name in solvers:
        if name not in SOLVERS:
            raise ProblemValidationError("solver", f"应为 {SOLVERS} 之一，实际为 {name}")
    options = _solver_options(config, opts)

    rows = timing_sweep(axis, _parse_grid(grid), cfg.n_x, cfg.n_u, cfg.T, solvers=solvers,
                        family=cfg.family, seed=cfg.seed, repeats=cfg.repeats, opts=options,
                        ratio=ratio, workers=cfg.workers)

    table = Table(title=f"计时扫描 (axis={axis})")
    for col in ("n_x", "n_u", "T", "solver", "status", "iters", "us/iter", "分解/迭代"):
        table.add_column(col, style="cyan" if col != "status" else "magenta")
    for r in rows:
        table.add_row(str(r.n_x), str(r.n_u), str(r.T), r.solver, r.status, str(r.iters),
                      f"{r.time_per_iter_us:.1f}", f"{r.factorizations_per_iter:.2f}")
    console.print(table)

    if out is not None:
        write_report(rows, out, cfg.format)


@app.command()
def profile(
    reports: List[Path] = typer.Argument(..., help="sweep 输出的报告文件"),
    cost: str = typer.Option("time_per_iter_us", "--cost", help="作为代价的列"),
    out: Optional[Path] = typer.Option(None, "--out"),
    fmt: str = typer.Option("csv", "--format"),
):
    """由扫描报告计算 Dolan–Moré 性能曲线"""
    points = perf_profile(load_reports(reports), cost_key=cost)
    table = Table(title="性能曲线")
    table.add_column("solver", style="cyan")
    table.add_column("ratio", style="magenta")
    table.add_column("fraction", style="magenta")
    for p in points:
        table.add_row(p.solver, f"{p.ratio:.4g}", f"{p.fraction:.3f}")
    console.print(table)
    if out is not None:
        write_report(points, out, fmt)


@app.command()
def check(
    problem: Optional[Path] = typer.Option(None, "--problem"),
    family: Optional[str] = typer.Option(None, "--family"),
    nx: Optional[int] = typer.Option(None, "--nx"),
    nu: Optional[int] = typer.Option(None, "--nu"),
    T: Optional[int] = typer.Option(None, "--T"),
    seed: Optional[int] = typer.Option(None, "--seed"),
    opts: Optional[str] = typer.Option(None, "--opts"),
    config: Optional[Path] = typer.Option(None, "--config"),
):
    """用两种求解器求解同一问题并比较解"""
    cfg = _bench_config(config, family=family, n_x=nx, n_u=nu, T=T, seed=seed)
    options = _solver_options(config, opts)
    prob = _build_problem(cfg, problem)
    results = {name: make_solver(name, prob, options).solve() for name in ("nullspace", "classical")}
    ns, cl = results["nullspace"], results["classical"]

    table = Table(title="求解器一致性")
    table.add_column("项目", style="cyan")
    table.add_column("nullspace", style="magenta")
    table.add_column("classical", style="magenta")
    table.add_row("状态", ns.status.value, cl.status.value)
    table.add_row("牛顿迭代", str(ns.iterations), str(cl.iterations))
    table.add_row("分解/迭代", f"{ns.factorizations / max(ns.iterations, 1):.2f}",
                  f"{cl.factorizations / max(cl.iterations, 1):.2f}")
    table.add_row("目标值", f"{ns.objective:.9g}", f"{cl.objective:.9g}")
    table.add_row("us/iter", f"{ns.time_per_iteration * 1e6:.1f}", f"{cl.time_per_iteration * 1e6:.1f}")
    console.print(table)

    diff_u = float(np.max(np.abs(ns.u_trajectory - cl.u_trajectory)))
    diff_x = float(np.max(np.abs(ns.x_trajectory - cl.x_trajectory)))
    console.print(f"max|Δu| = {diff_u:.3e}, max|Δx| = {diff_x:.3e}, max|u*| = {ns.max_virtual:.3e}")
    if not (ns.converged and cl.converged):
        raise typer.Exit(EXIT_SOLVER_FAILURE)


def main() -> None:
    """控制台脚本入口：把用法错误映射为退出码 1"""
    try:
        code = app(standalone_mode=False)
    except click.exceptions.Abort:
        console.print("[yellow]已取消[/yellow]")
        sys.exit(EXIT_USAGE)
    except click.ClickException as exc:
        exc.show()
        sys.exit(EXIT_USAGE)
    except NsmpcError as exc:
        logger.error(f"[#cli] {exc}")
        console.print(f"[red]错误: {exc}[/red]")
        sys.exit(EXIT_USAGE)
    sys.exit(code if isinstance(code, int) else 0)


if __name__ == "__main__":
    main()
