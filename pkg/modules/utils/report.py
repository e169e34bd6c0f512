from mixturedetect.evaluation import metrics_table


class ReportService:
    def __init__(self, cli):
        self.cli = cli

    def generate(self, **kwargs):
        """Plain-text block: underlined title, description, footer; empty parts are skipped."""
        title = kwargs.get('title', '')
        description = kwargs.get('description', '')
        footer = kwargs.get('footer', '')

        parts = []
        if title:
            parts.append(f'{title}\n{"-" * len(title)}')
        if description:
            parts.append(description)
        if footer:
            parts.append(footer)
        return '\n'.join(parts)

    def metrics(self, title, reports, footer=''):
        return self.generate(title=title, description=metrics_table(reports), footer=footer)


def setup(cli):
    cli.add_service(ReportService(cli))
