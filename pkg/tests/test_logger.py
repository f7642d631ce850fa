import io

from npcselect.logger import Colors, Logger, NullLogger, resolve


def _lines(stream):
    return stream.getvalue().splitlines()


def test_default_level_hides_debug():
    stream = io.StringIO()
    logger = Logger(stream=stream)
    logger.log('INFO', 'loading data')
    logger.log('DEBUG', 'fold 3')
    logger.log('success', 'done')
    logger.close()
    assert _lines(stream) == [f"[{Colors.BLUE}INFO{Colors.NC}] loading data",
                              f"[{Colors.GREEN}SUCCESS{Colors.NC}] done"]


def test_quiet_keeps_warnings_and_errors(tmp_path):
    stream = io.StringIO()
    log_file = tmp_path / 'logs' / 'run.log'
    logger = Logger(log_file, quiet=True, stream=stream)
    logger.log('INFO', 'progress')
    logger.log('WARN', 'ragged input')
    logger.log('ERROR', 'stage failed')
    logger.close()
    assert 'progress' not in stream.getvalue()
    assert f"[{Colors.YELLOW}WARN{Colors.NC}] ragged input" in _lines(stream)
    text = log_file.read_text(encoding='utf-8')
    assert 'WARNING - ragged input' in text
    assert 'ERROR - stage failed' in text
    assert 'progress' not in text


def test_verbose_shows_debug():
    stream = io.StringIO()
    logger = Logger(verbose=True, stream=stream)
    logger.log('DEBUG', 'lambda=0.1')
    logger.close()
    assert _lines(stream) == [f"[{Colors.NC}DEBUG{Colors.NC}] lambda=0.1"]


def test_resolve_falls_back_to_null_logger():
    assert isinstance(resolve(None), NullLogger)
    logger = Logger(stream=io.StringIO())
    assert resolve(logger) is logger
    logger.close()
